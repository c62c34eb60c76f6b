//! Backward finite-difference solution of the semilinear HJB equation
//!
//! ```text
//! 0 = du/dt + mu.grad u - theta/4 (grad u)' M (grad u)
//!       + 1/2 tr(M D2 u) - K_theta(x, grad u),     u(T, .) = 0
//! ```
//!
//! on a truncated rectangular grid (n = 1 or 2 factors), plus the
//! exponential transforms, residual checks, and extraction of the optimal
//! strategy field.
//!
//! Time stepping works on the time-reversed variable `w(tau) = u(T - tau)`,
//! which satisfies the forward Cauchy problem with `w(0) = 0`; the same
//! stepper drives the ergodic solver to large horizons. The default scheme
//! treats the linear part (diffusion and factor drift) implicitly with a
//! banded solve whose factorization is reused across steps, and lags the
//! gradient-quadratic term and the Hamiltonian. An explicit scheme is kept
//! for cross-checking under the usual parabolic step restriction.
//!
//! Boundary conditions impose zero second derivative (linear extrapolation)
//! along the inward normal; a 10% trust-region margin is excluded from all
//! residual checks, so boundary artifacts stay out of reported errors.

use rayon::prelude::*;
use serde::Serialize;

use crate::control::{ControlParams, NodeCoeffs};
use crate::error::{Error, Result};
use crate::linalg::BandMatrix;
use crate::market::{CoeffBuf, Grid, MarketModel};

/// Width fraction excluded per side by residual and acceptance checks.
pub const TRUST_MARGIN: f64 = 0.1;

// ---------------------------------------------------------------------------
// Fields on the grid
// ---------------------------------------------------------------------------

/// Scalar field sampled on a time mesh and a spatial grid
/// (`data[k * nodes + i]` is the value at time index `k`, node `i`).
#[derive(Debug, Clone)]
pub struct GridField {
    grid: Grid,
    times: Vec<f64>,
    data: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Grid, times: Vec<f64>, data: Vec<f64>) -> Self {
        assert_eq!(times.len() * grid.node_count(), data.len());
        GridField { grid, times, data }
    }

    pub fn zeros(grid: Grid, times: Vec<f64>) -> Self {
        let len = times.len() * grid.node_count();
        GridField {
            grid,
            times,
            data: vec![0.0; len],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn value(&self, time_idx: usize, node: usize) -> f64 {
        self.data[time_idx * self.grid.node_count() + node]
    }

    pub fn slice(&self, time_idx: usize) -> &[f64] {
        let nodes = self.grid.node_count();
        &self.data[time_idx * nodes..(time_idx + 1) * nodes]
    }

    pub fn slice_mut(&mut self, time_idx: usize) -> &mut [f64] {
        let nodes = self.grid.node_count();
        &mut self.data[time_idx * nodes..(time_idx + 1) * nodes]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Central-difference spatial gradient at a node (one-sided at faces).
    pub fn gradient_into(&self, time_idx: usize, node: usize, out: &mut [f64]) {
        gradient_at(&self.grid, self.slice(time_idx), node, out);
    }

    /// Multilinear interpolation in space, linear in time.
    pub fn interpolate(&self, t: f64, x: &[f64]) -> Result<f64> {
        let (k0, k1, wt) = locate_time(&self.times, t)?;
        let v0 = interp_space(&self.grid, self.slice(k0), x)?;
        let v1 = interp_space(&self.grid, self.slice(k1), x)?;
        Ok((1.0 - wt) * v0 + wt * v1)
    }
}

fn locate_time(times: &[f64], t: f64) -> Result<(usize, usize, f64)> {
    let t0 = times[0];
    let t1 = *times.last().unwrap();
    let eps = 1e-9 * (1.0 + t1.abs());
    if t < t0 - eps || t > t1 + eps {
        return Err(Error::OutOfDomain(format!(
            "time {t} outside the field support [{t0}, {t1}]"
        )));
    }
    if times.len() == 1 {
        return Ok((0, 0, 0.0));
    }
    let dt = times[1] - times[0];
    let pos = ((t - t0) / dt).clamp(0.0, (times.len() - 1) as f64);
    let k0 = (pos.floor() as usize).min(times.len() - 2);
    Ok((k0, k0 + 1, pos - k0 as f64))
}

fn interp_space(grid: &Grid, slice: &[f64], x: &[f64]) -> Result<f64> {
    let n = grid.dim();
    if x.len() != n {
        return Err(Error::OutOfDomain(format!(
            "query dimension {} does not match grid dimension {n}",
            x.len()
        )));
    }
    let mut base = vec![0usize; n];
    let mut frac = vec![0.0; n];
    for d in 0..n {
        let lo = grid.lower()[d];
        let hi = grid.upper()[d];
        let eps = 1e-9 * (hi - lo);
        if x[d] < lo - eps || x[d] > hi + eps {
            return Err(Error::OutOfDomain(format!(
                "coordinate {} = {} outside [{lo}, {hi}]",
                d, x[d]
            )));
        }
        let pos = ((x[d] - lo) / grid.spacing()[d]).clamp(0.0, (grid.points()[d] - 1) as f64);
        base[d] = (pos.floor() as usize).min(grid.points()[d] - 2);
        frac[d] = pos - base[d] as f64;
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << n) {
        let mut wgt = 1.0;
        let mut mi = base.clone();
        for d in 0..n {
            if corner & (1 << d) != 0 {
                mi[d] += 1;
                wgt *= frac[d];
            } else {
                wgt *= 1.0 - frac[d];
            }
        }
        if wgt != 0.0 {
            acc += wgt * slice[grid.flat_index(&mi)];
        }
    }
    Ok(acc)
}

/// Gradient of a spatial slice at one node: central differences at interior
/// nodes, one-sided at faces.
pub(crate) fn gradient_at(grid: &Grid, slice: &[f64], node: usize, out: &mut [f64]) {
    let n = grid.dim();
    let mi = grid.multi_index(node);
    let mut stride = vec![0usize; n];
    let mut s = 1;
    for d in (0..n).rev() {
        stride[d] = s;
        s *= grid.points()[d];
    }
    for d in 0..n {
        let h = grid.spacing()[d];
        let p = grid.points()[d];
        out[d] = if mi[d] == 0 {
            (slice[node + stride[d]] - slice[node]) / h
        } else if mi[d] == p - 1 {
            (slice[node] - slice[node - stride[d]]) / h
        } else {
            (slice[node + stride[d]] - slice[node - stride[d]]) / (2.0 * h)
        };
    }
}

/// Grid-sampled value function with its interior residual diagnostic.
#[derive(Debug, Clone)]
pub struct ValueField {
    pub u: GridField,
    /// Max abs discrete PDE residual over the trust region and interior times.
    pub residual_interior_max: f64,
}

/// Grid-sampled investment-fraction map, `h[(k * nodes + i) * m + l]`.
#[derive(Debug, Clone)]
pub struct StrategyField {
    grid: Grid,
    times: Vec<f64>,
    m: usize,
    h: Vec<f64>,
}

impl StrategyField {
    pub fn new(grid: Grid, times: Vec<f64>, m: usize, h: Vec<f64>) -> Self {
        assert_eq!(times.len() * grid.node_count() * m, h.len());
        StrategyField { grid, times, m, h }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn assets(&self) -> usize {
        self.m
    }

    pub fn fractions(&self, time_idx: usize, node: usize) -> &[f64] {
        let off = (time_idx * self.grid.node_count() + node) * self.m;
        &self.h[off..off + self.m]
    }

    /// Feedback evaluation along a path: clamped to the grid support
    /// (nearest-face extrapolation), multilinear in space, linear in time.
    /// Allocation-free; called per path per step in the simulators.
    pub fn fractions_at(&self, t: f64, x: &[f64], out: &mut [f64]) {
        const MAX_DIM: usize = 4;
        let grid = &self.grid;
        let n = grid.dim();
        assert!(n <= MAX_DIM, "strategy fields support up to {MAX_DIM} factors");
        let nt = self.times.len();
        let (k0, k1, wt) = if nt == 1 {
            (0, 0, 0.0)
        } else {
            let t0 = self.times[0];
            let dt = self.times[1] - self.times[0];
            let pos = ((t - t0) / dt).clamp(0.0, (nt - 1) as f64);
            let k0 = (pos.floor() as usize).min(nt - 2);
            (k0, k0 + 1, pos - k0 as f64)
        };
        // clamped cell location and flat strides per dimension
        let mut base_flat = 0usize;
        let mut frac = [0.0f64; MAX_DIM];
        let mut stride = [0usize; MAX_DIM];
        let mut s = 1usize;
        for d in (0..n).rev() {
            stride[d] = s;
            s *= grid.points()[d];
        }
        for d in 0..n {
            let xc = x[d].clamp(grid.lower()[d], grid.upper()[d]);
            let pos = ((xc - grid.lower()[d]) / grid.spacing()[d])
                .clamp(0.0, (grid.points()[d] - 1) as f64);
            let b = (pos.floor() as usize).min(grid.points()[d] - 2);
            frac[d] = pos - b as f64;
            base_flat += b * stride[d];
        }
        let nodes = grid.node_count();
        out[..self.m].fill(0.0);
        for corner in 0..(1usize << n) {
            let mut wgt = 1.0;
            let mut node = base_flat;
            for d in 0..n {
                if corner & (1 << d) != 0 {
                    node += stride[d];
                    wgt *= frac[d];
                } else {
                    wgt *= 1.0 - frac[d];
                }
            }
            if wgt == 0.0 {
                continue;
            }
            let off0 = (k0 * nodes + node) * self.m;
            if k0 == k1 || wt == 0.0 {
                for l in 0..self.m {
                    out[l] += wgt * self.h[off0 + l];
                }
            } else {
                let off1 = (k1 * nodes + node) * self.m;
                for l in 0..self.m {
                    out[l] += wgt * ((1.0 - wt) * self.h[off0 + l] + wt * self.h[off1 + l]);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Solver configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Implicit linear part (banded solve), lagged nonlinear terms.
    SemiImplicit,
    /// Forward Euler; requires `dt <= dx^2 / (2 max tr M)`.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryRule {
    /// Boundary value pinned to the linear extrapolation of its two inward
    /// neighbors (discrete zero second derivative along the inward normal).
    LinearExtrapolation,
    /// PDE solved at boundary nodes with the normal diffusion term dropped
    /// and one-sided first differences.
    ZeroSecondDerivative,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolverConfig {
    /// Requested time step; the actual step divides the horizon evenly.
    pub dt: f64,
    pub scheme: Scheme,
    pub boundary: BoundaryRule,
    /// Fixed-point sweeps of the lagged nonlinear terms per time step.
    pub inner_iterations: usize,
    /// Interior-residual acceptance threshold: the solve fails if the
    /// discrete residual exceeds `tolerance * (1 + max |u|)`.
    pub tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: 1e-3,
            scheme: Scheme::SemiImplicit,
            boundary: BoundaryRule::LinearExtrapolation,
            inner_iterations: 1,
            tolerance: 1e-3,
        }
    }
}

// ---------------------------------------------------------------------------
// Time stepper shared by the finite-horizon and ergodic solvers
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq)]
enum NodeClass {
    Interior,
    /// Boundary node with the signed flat offset of one inward step.
    Boundary(isize),
}

pub(crate) struct Stepper {
    grid: Grid,
    nodes: usize,
    n: usize,
    theta: f64,
    pub dt: f64,
    scheme: Scheme,
    boundary: BoundaryRule,
    inner_iterations: usize,
    coeffs: Vec<NodeCoeffs>,
    class: Vec<NodeClass>,
    stride: Vec<usize>,
    implicit: Option<BandMatrix>,
}

pub(crate) struct StepScratch {
    grads: Vec<f64>,
    rhs: Vec<f64>,
    g: Vec<f64>,
    work: Vec<f64>,
}

impl StepScratch {
    fn new(nodes: usize, n: usize, m: usize) -> Self {
        StepScratch {
            grads: vec![0.0; nodes * n],
            rhs: vec![0.0; nodes],
            g: vec![0.0; m],
            work: vec![0.0; nodes],
        }
    }
}

impl Stepper {
    pub fn new(
        model: &MarketModel,
        params: &ControlParams,
        grid: &Grid,
        cfg: &SolverConfig,
        dt: f64,
    ) -> Result<Self> {
        let n = grid.dim();
        if n != model.n() {
            return Err(Error::Config(format!(
                "grid dimension {n} does not match factor count {}",
                model.n()
            )));
        }
        if n > 2 {
            return Err(Error::Config(
                "the grid solver supports n in {1, 2}; use the Monte Carlo tools for higher n"
                    .into(),
            ));
        }
        if !(dt > 0.0) {
            return Err(Error::Config(format!("time step must be positive (got {dt})")));
        }
        let nodes = grid.node_count();
        let mut stride = vec![0usize; n];
        let mut s = 1;
        for d in (0..n).rev() {
            stride[d] = s;
            s *= grid.points()[d];
        }

        // cache coefficient products at every node (deterministic order)
        let coeffs: Result<Vec<NodeCoeffs>> = (0..nodes)
            .into_par_iter()
            .map(|i| {
                let mut buf = CoeffBuf::new(model.m(), model.n());
                let x = grid.node(i);
                model.eval_into(&x, &mut buf)?;
                NodeCoeffs::from_buf(model, &buf, &x)
            })
            .collect();
        let coeffs = coeffs?;

        let mut class = vec![NodeClass::Interior; nodes];
        for i in 0..nodes {
            let mi = grid.multi_index(i);
            let mut inward = 0isize;
            for d in 0..n {
                if mi[d] == 0 {
                    inward += stride[d] as isize;
                } else if mi[d] == grid.points()[d] - 1 {
                    inward -= stride[d] as isize;
                }
            }
            if inward != 0 {
                class[i] = NodeClass::Boundary(inward);
            }
        }

        if cfg.scheme == Scheme::Explicit {
            let max_tr: f64 = coeffs
                .iter()
                .map(|c| (0..n).map(|d| c.m_mat[d * n + d]).sum::<f64>())
                .fold(0.0, f64::max);
            let min_dx2 = grid
                .spacing()
                .iter()
                .map(|h| h * h)
                .fold(f64::INFINITY, f64::min);
            let dt_max = min_dx2 / (2.0 * max_tr);
            if dt > dt_max {
                return Err(Error::Solver(format!(
                    "explicit scheme unstable: dt = {dt} exceeds dx^2/(2 max tr M) = {dt_max:.3e}"
                )));
            }
        }

        let mut stepper = Stepper {
            grid: grid.clone(),
            nodes,
            n,
            theta: params.theta(),
            dt,
            scheme: cfg.scheme,
            boundary: cfg.boundary,
            inner_iterations: cfg.inner_iterations.max(1),
            coeffs,
            class,
            stride,
            implicit: None,
        };
        if cfg.scheme == Scheme::SemiImplicit {
            stepper.implicit = Some(stepper.assemble_implicit()?);
        }
        Ok(stepper)
    }

    pub fn scratch(&self) -> StepScratch {
        let m = self.coeffs[0].m;
        StepScratch::new(self.nodes, self.n, m)
    }

    fn assemble_implicit(&self) -> Result<BandMatrix> {
        let n = self.n;
        let dt = self.dt;
        let reach = 2 * self.stride.iter().sum::<usize>();
        let mut mat = BandMatrix::zeros(self.nodes, reach, reach);
        for i in 0..self.nodes {
            match self.class[i] {
                NodeClass::Interior => {
                    mat.add(i, i, 1.0);
                    let c = &self.coeffs[i];
                    for d in 0..n {
                        let h = self.grid.spacing()[d];
                        let sd = self.stride[d];
                        let m_dd = c.m_mat[d * n + d];
                        let adv = c.mu[d] / (2.0 * h);
                        let dif = 0.5 * m_dd / (h * h);
                        mat.add(i, i, dt * m_dd / (h * h));
                        mat.add(i, i + sd, -dt * (dif + adv));
                        mat.add(i, i - sd, -dt * (dif - adv));
                    }
                    if n == 2 {
                        let m01 = c.m_mat[1];
                        if m01 != 0.0 {
                            let w = m01 / (4.0 * self.grid.spacing()[0] * self.grid.spacing()[1]);
                            let (s0, s1) = (self.stride[0], self.stride[1]);
                            mat.add(i, i + s0 + s1, -dt * w);
                            mat.add(i, i + s0 - s1, dt * w);
                            mat.add(i, i - s0 + s1, dt * w);
                            mat.add(i, i - s0 - s1, -dt * w);
                        }
                    }
                }
                NodeClass::Boundary(inward) => match self.boundary {
                    BoundaryRule::LinearExtrapolation => {
                        let j1 = (i as isize + inward) as usize;
                        let j2 = (i as isize + 2 * inward) as usize;
                        mat.add(i, i, 1.0);
                        mat.add(i, j1, -2.0);
                        mat.add(i, j2, 1.0);
                    }
                    BoundaryRule::ZeroSecondDerivative => {
                        mat.add(i, i, 1.0);
                        let c = &self.coeffs[i];
                        let mi = self.grid.multi_index(i);
                        for d in 0..n {
                            let h = self.grid.spacing()[d];
                            let sd = self.stride[d];
                            let p = self.grid.points()[d];
                            if mi[d] == 0 {
                                // one-sided advection, no normal diffusion
                                let adv = c.mu[d] / h;
                                mat.add(i, i, dt * adv);
                                mat.add(i, i + sd, -dt * adv);
                            } else if mi[d] == p - 1 {
                                let adv = c.mu[d] / h;
                                mat.add(i, i, -dt * adv);
                                mat.add(i, i - sd, dt * adv);
                            } else {
                                let m_dd = c.m_mat[d * n + d];
                                let adv = c.mu[d] / (2.0 * h);
                                let dif = 0.5 * m_dd / (h * h);
                                mat.add(i, i, dt * m_dd / (h * h));
                                mat.add(i, i + sd, -dt * (dif + adv));
                                mat.add(i, i - sd, -dt * (dif - adv));
                            }
                        }
                        // cross terms dropped at the boundary
                    }
                },
            }
        }
        mat.factor()?;
        Ok(mat)
    }

    fn gradients(&self, w: &[f64], grads: &mut [f64]) {
        let n = self.n;
        let grid = &self.grid;
        if self.nodes >= 4096 {
            grads
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, out)| gradient_at(grid, w, i, out));
        } else {
            for i in 0..self.nodes {
                gradient_at(grid, w, i, &mut grads[i * n..(i + 1) * n]);
            }
        }
    }

    /// Lagged nonlinear terms: `-theta/4 grad' M grad - K_theta(x, grad)`.
    #[inline]
    fn nonlinear(&self, i: usize, grads: &[f64], g: &mut [f64]) -> f64 {
        let n = self.n;
        let c = &self.coeffs[i];
        let grad = &grads[i * n..(i + 1) * n];
        let mut quad = 0.0;
        for a in 0..n {
            for b in 0..n {
                quad += grad[a] * c.m_mat[a * n + b] * grad[b];
            }
        }
        let k_theta = c.k_theta(self.theta, grad, g);
        -0.25 * self.theta * quad - k_theta
    }

    /// Full discrete spatial operator (linear + nonlinear) at one node,
    /// used by the explicit scheme and the residual evaluators.
    fn spatial_operator(&self, i: usize, w: &[f64], grads: &[f64], g: &mut [f64]) -> f64 {
        let n = self.n;
        let c = &self.coeffs[i];
        let mut lin = 0.0;
        for d in 0..n {
            let h = self.grid.spacing()[d];
            let sd = self.stride[d];
            let m_dd = c.m_mat[d * n + d];
            lin += 0.5 * m_dd * (w[i + sd] - 2.0 * w[i] + w[i - sd]) / (h * h);
        }
        if n == 2 {
            let m01 = c.m_mat[1];
            if m01 != 0.0 {
                let (s0, s1) = (self.stride[0], self.stride[1]);
                let h01 = 4.0 * self.grid.spacing()[0] * self.grid.spacing()[1];
                lin += m01 * (w[i + s0 + s1] - w[i + s0 - s1] - w[i - s0 + s1] + w[i - s0 - s1])
                    / h01;
            }
        }
        let grad = &grads[i * self.n..(i + 1) * self.n];
        for d in 0..n {
            lin += c.mu[d] * grad[d];
        }
        lin + self.nonlinear(i, grads, g)
    }

    /// Advances `w` by one step of the time-reversed equation.
    pub fn step(&self, w: &mut Vec<f64>, scratch: &mut StepScratch) -> Result<()> {
        match self.scheme {
            Scheme::SemiImplicit => self.step_semi_implicit(w, scratch),
            Scheme::Explicit => self.step_explicit(w, scratch),
        }
    }

    fn step_semi_implicit(&self, w: &mut Vec<f64>, scratch: &mut StepScratch) -> Result<()> {
        let mat = self.implicit.as_ref().unwrap();
        let dt = self.dt;
        // first sweep lags the nonlinearity at w; later sweeps use the
        // newest iterate held in `work`
        scratch.work.copy_from_slice(w);
        for _sweep in 0..self.inner_iterations {
            self.gradients(&scratch.work, &mut scratch.grads);
            for i in 0..self.nodes {
                scratch.rhs[i] = match self.class[i] {
                    NodeClass::Interior => {
                        w[i] + dt * self.nonlinear(i, &scratch.grads, &mut scratch.g)
                    }
                    NodeClass::Boundary(_) => match self.boundary {
                        BoundaryRule::LinearExtrapolation => 0.0,
                        BoundaryRule::ZeroSecondDerivative => {
                            w[i] + dt * self.nonlinear(i, &scratch.grads, &mut scratch.g)
                        }
                    },
                };
            }
            mat.solve_in_place(&mut scratch.rhs);
            scratch.work.copy_from_slice(&scratch.rhs);
        }
        std::mem::swap(w, &mut scratch.work);
        self.check_finite(w)
    }

    fn step_explicit(&self, w: &mut Vec<f64>, scratch: &mut StepScratch) -> Result<()> {
        let dt = self.dt;
        self.gradients(w, &mut scratch.grads);
        for i in 0..self.nodes {
            if self.class[i] == NodeClass::Interior {
                scratch.work[i] = w[i] + dt * self.spatial_operator(i, w, &scratch.grads, &mut scratch.g);
            }
        }
        match self.boundary {
            BoundaryRule::LinearExtrapolation => {
                for i in 0..self.nodes {
                    if let NodeClass::Boundary(inward) = self.class[i] {
                        let j1 = (i as isize + inward) as usize;
                        let j2 = (i as isize + 2 * inward) as usize;
                        // interior updates first; extrapolate from fresh values
                        let v1 = if self.class[j1] == NodeClass::Interior {
                            scratch.work[j1]
                        } else {
                            2.0 * scratch.work[(j1 as isize + inward) as usize]
                                - scratch.work[(j1 as isize + 2 * inward) as usize]
                        };
                        let v2 = if self.class[j2] == NodeClass::Interior {
                            scratch.work[j2]
                        } else {
                            w[j2]
                        };
                        scratch.work[i] = 2.0 * v1 - v2;
                    }
                }
            }
            BoundaryRule::ZeroSecondDerivative => {
                let n = self.n;
                for i in 0..self.nodes {
                    if let NodeClass::Boundary(_) = self.class[i] {
                        let c = &self.coeffs[i];
                        let mi = self.grid.multi_index(i);
                        let mut lin = 0.0;
                        for d in 0..n {
                            let h = self.grid.spacing()[d];
                            let sd = self.stride[d];
                            let p = self.grid.points()[d];
                            if mi[d] == 0 {
                                lin += c.mu[d] * (w[i + sd] - w[i]) / h;
                            } else if mi[d] == p - 1 {
                                lin += c.mu[d] * (w[i] - w[i - sd]) / h;
                            } else {
                                let m_dd = c.m_mat[d * n + d];
                                lin += 0.5 * m_dd * (w[i + sd] - 2.0 * w[i] + w[i - sd]) / (h * h)
                                    + c.mu[d] * (w[i + sd] - w[i - sd]) / (2.0 * h);
                            }
                        }
                        lin += self.nonlinear(i, &scratch.grads, &mut scratch.g);
                        scratch.work[i] = w[i] + dt * lin;
                    }
                }
            }
        }
        std::mem::swap(w, &mut scratch.work);
        self.check_finite(w)
    }

    fn check_finite(&self, w: &[f64]) -> Result<()> {
        if w.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Solver(
                "non-finite value detected during time stepping".into(),
            ))
        }
    }
}

// ---------------------------------------------------------------------------
// Finite-horizon solve
// ---------------------------------------------------------------------------

fn step_count(horizon: f64, dt: f64) -> usize {
    ((horizon / dt) - 1e-9).ceil().max(0.0) as usize
}

/// Solves the terminal-value problem on `[0, T]` and returns `u` on the full
/// time mesh together with its interior residual.
pub fn solve_finite_horizon(
    model: &MarketModel,
    params: &ControlParams,
    horizon: f64,
    grid: &Grid,
    cfg: &SolverConfig,
) -> Result<ValueField> {
    if horizon < 0.0 {
        return Err(Error::Config(format!("horizon must be >= 0 (got {horizon})")));
    }
    let nodes = grid.node_count();
    let steps = step_count(horizon, cfg.dt);
    if steps == 0 {
        let u = GridField::zeros(grid.clone(), vec![0.0]);
        return Ok(ValueField {
            u,
            residual_interior_max: 0.0,
        });
    }
    let dt = horizon / steps as f64;
    let stepper = Stepper::new(model, params, grid, cfg, dt)?;
    let mut scratch = stepper.scratch();
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let mut data = vec![0.0; (steps + 1) * nodes];
    let mut w = vec![0.0; nodes];
    // w(tau_j) = u(T - tau_j): the slice for time index k comes from j = steps - k
    for j in 1..=steps {
        stepper.step(&mut w, &mut scratch)?;
        let k = steps - j;
        data[k * nodes..(k + 1) * nodes].copy_from_slice(&w);
    }
    let u = GridField::new(grid.clone(), times, data);
    let residual = u_residual_of(&u, &stepper, TRUST_MARGIN);
    let max_u = u.max_abs();
    if cfg.tolerance.is_finite() && residual > cfg.tolerance * (1.0 + max_u) {
        return Err(Error::Solver(format!(
            "interior residual {residual:.3e} exceeds tolerance {:.3e} * (1 + {max_u:.3e})",
            cfg.tolerance
        )));
    }
    Ok(ValueField {
        u,
        residual_interior_max: residual,
    })
}

fn u_residual_of(u: &GridField, stepper: &Stepper, margin: f64) -> f64 {
    let times = u.times();
    if times.len() < 3 {
        return 0.0;
    }
    let grid = u.grid();
    let nodes = grid.node_count();
    let dt = times[1] - times[0];
    let region = grid.trust_region(margin);
    let n = grid.dim();
    let mut grads = vec![0.0; nodes * n];
    let mut g = vec![0.0; stepper.coeffs[0].m];
    let mut worst = 0.0f64;
    for k in 1..times.len() - 1 {
        let slice = u.slice(k);
        stepper.gradients(slice, &mut grads);
        for &i in &region {
            let u_t = (u.value(k + 1, i) - u.value(k - 1, i)) / (2.0 * dt);
            let space = stepper.spatial_operator(i, slice, &grads, &mut g);
            worst = worst.max((u_t + space).abs());
        }
    }
    worst
}

/// Recomputes the interior residual of a solved field (diagnostic).
pub fn u_residual(
    model: &MarketModel,
    params: &ControlParams,
    field: &ValueField,
    cfg: &SolverConfig,
) -> Result<f64> {
    let dt = if field.u.times().len() > 1 {
        field.u.times()[1] - field.u.times()[0]
    } else {
        cfg.dt
    };
    let stepper = Stepper::new(model, params, field.u.grid(), cfg, dt)?;
    Ok(u_residual_of(&field.u, &stepper, TRUST_MARGIN))
}

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

/// `psi = exp(-theta/2 u)`, positive everywhere.
pub fn to_psi(field: &ValueField, params: &ControlParams) -> GridField {
    let th = params.theta();
    let data = field.u.data().iter().map(|&u| (-0.5 * th * u).exp()).collect();
    GridField::new(field.u.grid().clone(), field.u.times().to_vec(), data)
}

/// `phi = v^{-theta/2} psi`, computed in log space to avoid overflow.
pub fn to_phi(field: &ValueField, params: &ControlParams, wealth: f64) -> Result<GridField> {
    if !(wealth > 0.0) {
        return Err(Error::Config(format!("wealth must be positive (got {wealth})")));
    }
    let th = params.theta();
    let log_v = wealth.ln();
    let data = field
        .u
        .data()
        .iter()
        .map(|&u| (-0.5 * th * (u + log_v)).exp())
        .collect();
    Ok(GridField::new(
        field.u.grid().clone(),
        field.u.times().to_vec(),
        data,
    ))
}

/// Inverse transform `u = -2/theta ln psi` (round trip check).
pub fn to_u(psi: &GridField, params: &ControlParams) -> GridField {
    let th = params.theta();
    let data = psi.data().iter().map(|&p| -2.0 / th * p.ln()).collect();
    GridField::new(psi.grid().clone(), psi.times().to_vec(), data)
}

/// Interior max-norm residual of the linearized equation satisfied by
/// `psi = exp(-theta/2 u)`:
///
/// ```text
/// 0 = psi_t + 1/2 tr(M D2 psi) + mu.grad psi + H(x, psi, grad psi)
/// H  = theta/2 inf_h [ ((theta+2)/4 h'Sh - h'(a-r1) - r) psi - 1/2 h'C grad psi ]
/// ```
///
/// The transform-consistency check: this residual must shrink under
/// refinement at the same rate as the primal residual.
pub fn psi_residual(
    field: &ValueField,
    model: &MarketModel,
    params: &ControlParams,
) -> Result<f64> {
    let psi = to_psi(field, params);
    let grid = psi.grid().clone();
    let times = psi.times();
    if times.len() < 3 {
        return Ok(0.0);
    }
    let th = params.theta();
    let n = grid.dim();
    let dt = times[1] - times[0];
    let region = grid.trust_region(TRUST_MARGIN);
    let mut stride = vec![0usize; n];
    let mut s = 1;
    for d in (0..n).rev() {
        stride[d] = s;
        s *= grid.points()[d];
    }
    let coeffs: Result<Vec<NodeCoeffs>> = region
        .iter()
        .map(|&i| NodeCoeffs::at(model, &grid.node(i)))
        .collect();
    let coeffs = coeffs?;
    let mut worst = 0.0f64;
    let mut grad = vec![0.0; n];
    for k in 1..times.len() - 1 {
        let slice = psi.slice(k);
        for (pos, &i) in region.iter().enumerate() {
            let c = &coeffs[pos];
            let psi_t = (psi.value(k + 1, i) - psi.value(k - 1, i)) / (2.0 * dt);
            gradient_at(&grid, slice, i, &mut grad);
            let mut second = 0.0;
            for d in 0..n {
                let h = grid.spacing()[d];
                second += 0.5
                    * c.m_mat[d * n + d]
                    * (slice[i + stride[d]] - 2.0 * slice[i] + slice[i - stride[d]])
                    / (h * h);
            }
            if n == 2 {
                let m01 = c.m_mat[1];
                if m01 != 0.0 {
                    let (s0, s1) = (stride[0], stride[1]);
                    second += m01
                        * (slice[i + s0 + s1] - slice[i + s0 - s1] - slice[i - s0 + s1]
                            + slice[i - s0 - s1])
                        / (4.0 * grid.spacing()[0] * grid.spacing()[1]);
                }
            }
            let mut adv = 0.0;
            for d in 0..n {
                adv += c.mu[d] * grad[d];
            }
            // g~ = (a - r1) psi + 1/2 C grad psi; H = theta/2 (-g~'S^{-1}g~/((theta+2) psi) - r psi)
            let p = slice[i];
            let m = c.m;
            let mut quad = 0.0;
            for ia in 0..m {
                let mut gi = c.amr[ia] * p;
                for d in 0..n {
                    gi += 0.5 * c.c[ia * n + d] * grad[d];
                }
                for ib in 0..m {
                    let mut gj = c.amr[ib] * p;
                    for d in 0..n {
                        gj += 0.5 * c.c[ib * n + d] * grad[d];
                    }
                    quad += gi * c.s_inv[ia * m + ib] * gj;
                }
            }
            let h_val = 0.5 * th * (-quad / ((th + 2.0) * p) - c.r * p);
            worst = worst.max((psi_t + second + adv + h_val).abs());
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Strategy extraction and criterion readout
// ---------------------------------------------------------------------------

/// Applies the minimizing selector to the value gradient at every node of
/// every time slice.
pub fn extract_optimal_strategy(
    field: &ValueField,
    model: &MarketModel,
    params: &ControlParams,
) -> Result<StrategyField> {
    let grid = field.u.grid().clone();
    let times = field.u.times().to_vec();
    let nodes = grid.node_count();
    let n = grid.dim();
    let m = model.m();
    let theta = params.theta();
    let coeffs: Result<Vec<NodeCoeffs>> = (0..nodes)
        .into_par_iter()
        .map(|i| NodeCoeffs::at(model, &grid.node(i)))
        .collect();
    let coeffs = coeffs?;
    let mut h = vec![0.0; times.len() * nodes * m];
    let mut grad = vec![0.0; n];
    let mut g = vec![0.0; m];
    for k in 0..times.len() {
        for i in 0..nodes {
            field.u.gradient_into(k, i, &mut grad);
            let off = (k * nodes + i) * m;
            coeffs[i].selector(theta, &grad, &mut g, &mut h[off..off + m]);
        }
    }
    Ok(StrategyField::new(grid, times, m, h))
}

/// Criterion value read from the solved field: `ln v + u(t, x)`.
pub fn criterion_from_value(field: &ValueField, t: f64, x: &[f64], wealth: f64) -> Result<f64> {
    if !(wealth > 0.0) {
        return Err(Error::Config(format!("wealth must be positive (got {wealth})")));
    }
    Ok(wealth.ln() + field.u.interpolate(t, x)?)
}
