//! Path simulation and Monte Carlo estimation of the risk-sensitive
//! criteria.
//!
//! Wealth is simulated in log space with the Ito-corrected drift
//!
//! ```text
//! d ln V = [r + h'(a - r 1) - 1/2 h'SS'h] dt + h' sigma dW
//! ```
//!
//! so positivity holds by construction; factors follow Euler-Maruyama with
//! the same Gaussian increments. Every path owns a substream derived from
//! `(seed, path index)`: results are bitwise reproducible for any worker
//! count, and growing `n_paths` extends the ensemble without reshuffling
//! existing paths.
//!
//! The exponential moment `E[V^{-theta/2}]` is heavy-tailed for aggressive
//! strategies; the estimator works through a max-shifted log-sum-exp and
//! reports a Kish effective sample size so variance-starved estimates are
//! visible instead of silently biased.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::control::ControlParams;
use crate::error::{Error, Result};
use crate::hjb::StrategyField;
use crate::market::{CoeffBuf, MarketModel};

// ---------------------------------------------------------------------------
// Strategy and distortion rules
// ---------------------------------------------------------------------------

/// Deterministic feedback strategy `h(t, X(t))`. Strategies are plain maps
/// of time and factors, which keeps every simulated control progressively
/// measurable and square-integrable on bounded horizons.
pub trait StrategyRule: Send + Sync {
    fn fractions_into(&self, t: f64, x: &[f64], out: &mut [f64]);
}

impl StrategyRule for StrategyField {
    fn fractions_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.fractions_at(t, x, out);
    }
}

impl<S: StrategyRule + ?Sized> StrategyRule for &S {
    fn fractions_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (**self).fractions_into(t, x, out);
    }
}

impl<S: StrategyRule + ?Sized> StrategyRule for std::sync::Arc<S> {
    fn fractions_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (**self).fractions_into(t, x, out);
    }
}

/// Fixed investment fractions.
pub struct ConstantFractions(pub Vec<f64>);

impl ConstantFractions {
    pub fn zero(m: usize) -> Self {
        ConstantFractions(vec![0.0; m])
    }
}

impl StrategyRule for ConstantFractions {
    fn fractions_into(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

/// Scales another strategy by a constant factor.
pub struct ScaledStrategy<S> {
    pub inner: S,
    pub factor: f64,
}

impl<S: StrategyRule> StrategyRule for ScaledStrategy<S> {
    fn fractions_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.inner.fractions_into(t, x, out);
        for v in out.iter_mut() {
            *v *= self.factor;
        }
    }
}

/// Strategy from a closure `(t, x, out)`.
pub struct FnStrategy<F>(pub F);

impl<F> StrategyRule for FnStrategy<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    fn fractions_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.0)(t, x, out);
    }
}

/// Markov drift distortion `omega(X(t))` for the controlled factor SDE.
pub trait DistortionRule: Send + Sync {
    fn omega_into(&self, x: &[f64], out: &mut [f64]);
}

impl<D: DistortionRule + ?Sized> DistortionRule for &D {
    fn omega_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).omega_into(x, out);
    }
}

pub struct ConstantDistortion(pub Vec<f64>);

impl ConstantDistortion {
    pub fn zero(noise_dim: usize) -> Self {
        ConstantDistortion(vec![0.0; noise_dim])
    }
}

impl DistortionRule for ConstantDistortion {
    fn omega_into(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

pub struct FnDistortion<F>(pub F);

impl<F> DistortionRule for FnDistortion<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn omega_into(&self, x: &[f64], out: &mut [f64]) {
        (self.0)(x, out);
    }
}

// ---------------------------------------------------------------------------
// Configuration and bundles
// ---------------------------------------------------------------------------

/// Euler-Maruyama configuration. `record_stride` controls how many steps
/// separate stored samples (initial and final states are always stored).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SimConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub record_stride: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            n_paths: 10_000,
            seed: 1,
            record_stride: 1,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.n_paths == 0 {
            return Err(Error::Config(
                "simulation needs dt > 0 and n_paths >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Monte Carlo ensemble of factor paths and log-wealth paths.
#[derive(Debug, Clone)]
pub struct PathBundle {
    /// Recorded sample times (always including 0 and the horizon).
    pub times: Vec<f64>,
    /// Factor samples, `x[(p * times + k) * n + d]`.
    pub x: Vec<f64>,
    /// Log-wealth samples, `log_v[p * times + k]`; empty for factor-only runs.
    pub log_v: Vec<f64>,
    pub per_path_seeds: Vec<u64>,
    pub n_paths: usize,
    pub n: usize,
}

impl PathBundle {
    pub fn x_at(&self, path: usize, k: usize) -> &[f64] {
        let off = (path * self.times.len() + k) * self.n;
        &self.x[off..off + self.n]
    }

    pub fn log_v_at(&self, path: usize, k: usize) -> f64 {
        self.log_v[path * self.times.len() + k]
    }

    pub fn terminal_log_v(&self) -> impl Iterator<Item = f64> + '_ {
        let nt = self.times.len();
        (0..self.n_paths).map(move |p| self.log_v[p * nt + nt - 1])
    }
}

/// Point estimate of a risk-sensitive criterion.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CriterionEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub horizon: f64,
    /// Kish effective sample size of the exponential weights; below 100 the
    /// estimate is variance-starved.
    pub ess: f64,
}

impl CriterionEstimate {
    pub fn reliable(&self) -> bool {
        self.ess >= 100.0
    }
}

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Substream seed for one path: a hash of `(seed, path index)`, so the
/// ensemble extends without reshuffling when `n_paths` grows.
pub fn path_seed(master: u64, path_index: u64) -> u64 {
    splitmix64(master ^ splitmix64(path_index.wrapping_add(1)))
}

fn steps_for(horizon: f64, dt: f64) -> usize {
    ((horizon / dt) - 1e-9).ceil().max(1.0) as usize
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

struct PathRecorder {
    stride: usize,
    steps: usize,
    x: Vec<f64>,
    log_v: Vec<f64>,
}

impl PathRecorder {
    fn new(stride: usize, steps: usize, n: usize, with_wealth: bool) -> Self {
        let count = recorded_count(steps, stride);
        PathRecorder {
            stride: stride.max(1),
            steps,
            x: Vec::with_capacity(count * n),
            log_v: if with_wealth {
                Vec::with_capacity(count)
            } else {
                Vec::new()
            },
        }
    }

    #[inline]
    fn wants(&self, step: usize) -> bool {
        step == 0 || step == self.steps || step % self.stride == 0
    }

    #[inline]
    fn push(&mut self, step: usize, x: &[f64], log_v: Option<f64>) {
        if self.wants(step) {
            self.x.extend_from_slice(x);
            if let Some(lv) = log_v {
                self.log_v.push(lv);
            }
        }
    }
}

fn recorded_count(steps: usize, stride: usize) -> usize {
    let stride = stride.max(1);
    let mut count = 1; // step 0
    for k in 1..=steps {
        if k == steps || k % stride == 0 {
            count += 1;
        }
    }
    count
}

fn recorded_times(steps: usize, stride: usize, dt: f64) -> Vec<f64> {
    let stride = stride.max(1);
    let mut times = vec![0.0];
    for k in 1..=steps {
        if k == steps || k % stride == 0 {
            times.push(k as f64 * dt);
        }
    }
    times
}

/// Simulates factor and wealth paths under a feedback strategy.
///
/// Factors follow Euler-Maruyama with drift `mu` and loading `Lambda`;
/// log-wealth uses the Ito-corrected drift, and both share the same
/// `(m+n)`-dimensional Gaussian increments. Fully deterministic given the
/// seed.
pub fn simulate(
    model: &MarketModel,
    strategy: &dyn StrategyRule,
    x0: &[f64],
    v0: f64,
    horizon: f64,
    cfg: &SimConfig,
) -> Result<PathBundle> {
    cfg.validate()?;
    if !(v0 > 0.0) {
        return Err(Error::Config(format!("initial wealth must be positive (got {v0})")));
    }
    if x0.len() != model.n() {
        return Err(Error::Config(format!(
            "initial factor dimension {} does not match n = {}",
            x0.len(),
            model.n()
        )));
    }
    let steps = steps_for(horizon, cfg.dt);
    let dt = horizon / steps as f64;
    let sqrt_dt = dt.sqrt();
    let m = model.m();
    let n = model.n();
    let k = model.noise_dim();
    let log_v0 = v0.ln();

    let per_path: Result<Vec<PathRecorder>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(path_seed(cfg.seed, p as u64));
            let mut rec = PathRecorder::new(cfg.record_stride, steps, n, true);
            let mut x = x0.to_vec();
            let mut log_v = log_v0;
            let mut buf = CoeffBuf::new(m, n);
            let mut h = vec![0.0; m];
            let mut hs = vec![0.0; k];
            let mut dw = vec![0.0; k];
            rec.push(0, &x, Some(log_v));
            for step in 0..steps {
                let t = step as f64 * dt;
                model.eval_into(&x, &mut buf).map_err(|e| {
                    Error::Simulation(format!("path {p}, step {step}: {e}"))
                })?;
                strategy.fractions_into(t, &x, &mut h);
                if h.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Simulation(format!(
                        "path {p}, step {step}: strategy returned non-finite fractions"
                    )));
                }
                for z in dw.iter_mut() {
                    *z = rng.sample::<f64, _>(StandardNormal) * sqrt_dt;
                }
                // h' sigma row and the quadratic h'SS'h = |sigma' h|^2
                let mut hsh = 0.0;
                for j in 0..k {
                    let mut v = 0.0;
                    for l in 0..m {
                        v += h[l] * buf.sigma[l * k + j];
                    }
                    hs[j] = v;
                    hsh += v * v;
                }
                let mut excess = 0.0;
                for l in 0..m {
                    excess += h[l] * (buf.a[l] - buf.r);
                }
                let mut noise = 0.0;
                for j in 0..k {
                    noise += hs[j] * dw[j];
                }
                log_v += (buf.r + excess - 0.5 * hsh) * dt + noise;
                for d in 0..n {
                    let mut dx = buf.mu[d] * dt;
                    for j in 0..k {
                        dx += buf.lambda[d * k + j] * dw[j];
                    }
                    x[d] += dx;
                }
                if !log_v.is_finite() || x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Simulation(format!(
                        "path {p}, step {}: non-finite state",
                        step + 1
                    )));
                }
                rec.push(step + 1, &x, Some(log_v));
            }
            Ok(rec)
        })
        .collect();
    let per_path = per_path?;

    let times = recorded_times(steps, cfg.record_stride, dt);
    let mut x_all = Vec::with_capacity(cfg.n_paths * times.len() * n);
    let mut lv_all = Vec::with_capacity(cfg.n_paths * times.len());
    for rec in &per_path {
        x_all.extend_from_slice(&rec.x);
        lv_all.extend_from_slice(&rec.log_v);
    }
    Ok(PathBundle {
        times,
        x: x_all,
        log_v: lv_all,
        per_path_seeds: (0..cfg.n_paths as u64).map(|p| path_seed(cfg.seed, p)).collect(),
        n_paths: cfg.n_paths,
        n,
    })
}

/// Simulates the controlled factor SDE with drift
/// `mu + Lambda omega + theta/2 Lambda sigma' h` (factors only).
pub fn simulate_controlled_factor(
    model: &MarketModel,
    h_rule: &dyn StrategyRule,
    omega_rule: &dyn DistortionRule,
    x0: &[f64],
    horizon: f64,
    params: &ControlParams,
    cfg: &SimConfig,
) -> Result<PathBundle> {
    cfg.validate()?;
    let steps = steps_for(horizon, cfg.dt);
    let dt = horizon / steps as f64;
    let sqrt_dt = dt.sqrt();
    let m = model.m();
    let n = model.n();
    let k = model.noise_dim();
    let theta = params.theta();

    let per_path: Result<Vec<PathRecorder>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(path_seed(cfg.seed, p as u64));
            let mut rec = PathRecorder::new(cfg.record_stride, steps, n, false);
            let mut x = x0.to_vec();
            let mut buf = CoeffBuf::new(m, n);
            let mut h = vec![0.0; m];
            let mut omega = vec![0.0; k];
            let mut dw = vec![0.0; k];
            rec.push(0, &x, None);
            for step in 0..steps {
                let t = step as f64 * dt;
                model
                    .eval_into(&x, &mut buf)
                    .map_err(|e| Error::Simulation(format!("path {p}, step {step}: {e}")))?;
                h_rule.fractions_into(t, &x, &mut h);
                omega_rule.omega_into(&x, &mut omega);
                for z in dw.iter_mut() {
                    *z = rng.sample::<f64, _>(StandardNormal) * sqrt_dt;
                }
                for d in 0..n {
                    let mut drift = buf.mu[d];
                    for j in 0..k {
                        drift += buf.lambda[d * k + j] * omega[j];
                    }
                    for l in 0..m {
                        let mut inner = 0.0;
                        for j in 0..k {
                            inner += buf.lambda[d * k + j] * buf.sigma[l * k + j];
                        }
                        drift += 0.5 * theta * h[l] * inner;
                    }
                    let mut dx = drift * dt;
                    for j in 0..k {
                        dx += buf.lambda[d * k + j] * dw[j];
                    }
                    x[d] += dx;
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Simulation(format!(
                        "path {p}, step {}: non-finite state",
                        step + 1
                    )));
                }
                rec.push(step + 1, &x, None);
            }
            Ok(rec)
        })
        .collect();
    let per_path = per_path?;

    let times = recorded_times(steps, cfg.record_stride, dt);
    let mut x_all = Vec::with_capacity(cfg.n_paths * times.len() * n);
    for rec in &per_path {
        x_all.extend_from_slice(&rec.x);
    }
    Ok(PathBundle {
        times,
        x: x_all,
        log_v: Vec::new(),
        per_path_seeds: (0..cfg.n_paths as u64).map(|p| path_seed(cfg.seed, p)).collect(),
        n_paths: cfg.n_paths,
        n,
    })
}

// ---------------------------------------------------------------------------
// Criterion estimators
// ---------------------------------------------------------------------------

struct ExpMoment {
    z_max: f64,
    w_mean: f64,
    w_sd: f64,
    ess: f64,
}

/// Max-shifted exponential-moment statistics of `z_i = -theta/2 ln V_i(T)`.
fn exp_moment(z: &[f64]) -> ExpMoment {
    let n = z.len();
    let z_max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = z.iter().map(|&v| (v - z_max).exp()).collect();
    let sum: f64 = w.iter().sum();
    let mean = sum / n as f64;
    let var = if n > 1 {
        w.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let sum_sq: f64 = w.iter().map(|&v| v * v).sum();
    let ess = if sum_sq > 0.0 { sum * sum / sum_sq } else { 0.0 };
    ExpMoment {
        z_max,
        w_mean: mean,
        w_sd: var.sqrt(),
        ess,
    }
}

/// Risk-sensitive criterion estimate from terminal log-wealth:
/// `(-2/theta) ln mean(exp(-theta/2 ln V(T)))` with a delta-method standard
/// error on the exponential-moment estimator.
pub fn estimate_criterion_finite(bundle: &PathBundle, params: &ControlParams) -> Result<CriterionEstimate> {
    if bundle.log_v.is_empty() {
        return Err(Error::Simulation(
            "bundle has no wealth paths (factor-only simulation)".into(),
        ));
    }
    let theta = params.theta();
    let z: Vec<f64> = bundle.terminal_log_v().map(|lv| -0.5 * theta * lv).collect();
    let stats = exp_moment(&z);
    let value = -2.0 / theta * (stats.z_max + stats.w_mean.ln());
    let std_error = if bundle.n_paths > 1 {
        2.0 / theta * stats.w_sd / (stats.w_mean * (bundle.n_paths as f64).sqrt())
    } else {
        0.0
    };
    Ok(CriterionEstimate {
        value,
        std_error,
        n_paths: bundle.n_paths,
        horizon: *bundle.times.last().unwrap(),
        ess: stats.ess,
    })
}

/// Per-horizon normalized criteria `T^{-1} J_theta^T` along one simulated
/// ensemble (the sequence is the trend diagnostic toward the ergodic rate).
pub fn estimate_criterion_ergodic(
    model: &MarketModel,
    strategy: &dyn StrategyRule,
    x0: &[f64],
    v0: f64,
    params: &ControlParams,
    cfg: &SimConfig,
    horizons: &[f64],
) -> Result<Vec<CriterionEstimate>> {
    if horizons.is_empty() {
        return Err(Error::Config("need at least one horizon".into()));
    }
    let mut sorted = horizons.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if sorted[0] <= 0.0 {
        return Err(Error::Config("horizons must be positive".into()));
    }
    let t_max = *sorted.last().unwrap();
    let steps = steps_for(t_max, cfg.dt);
    let dt = t_max / steps as f64;
    // snap each horizon to a step index
    let marks: Vec<usize> = sorted
        .iter()
        .map(|&t| ((t / dt).round() as usize).clamp(1, steps))
        .collect();

    let theta = params.theta();
    let m = model.m();
    let n = model.n();
    let k = model.noise_dim();
    let sqrt_dt = dt.sqrt();
    let log_v0 = v0.ln();

    let per_path: Result<Vec<Vec<f64>>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(path_seed(cfg.seed, p as u64));
            let mut x = x0.to_vec();
            let mut log_v = log_v0;
            let mut buf = CoeffBuf::new(m, n);
            let mut h = vec![0.0; m];
            let mut hs = vec![0.0; k];
            let mut dw = vec![0.0; k];
            let mut at_marks = Vec::with_capacity(marks.len());
            let mut next = 0usize;
            for step in 0..steps {
                let t = step as f64 * dt;
                model
                    .eval_into(&x, &mut buf)
                    .map_err(|e| Error::Simulation(format!("path {p}, step {step}: {e}")))?;
                strategy.fractions_into(t, &x, &mut h);
                for z in dw.iter_mut() {
                    *z = rng.sample::<f64, _>(StandardNormal) * sqrt_dt;
                }
                let mut hsh = 0.0;
                for j in 0..k {
                    let mut v = 0.0;
                    for l in 0..m {
                        v += h[l] * buf.sigma[l * k + j];
                    }
                    hs[j] = v;
                    hsh += v * v;
                }
                let mut excess = 0.0;
                for l in 0..m {
                    excess += h[l] * (buf.a[l] - buf.r);
                }
                let mut noise = 0.0;
                for j in 0..k {
                    noise += hs[j] * dw[j];
                }
                log_v += (buf.r + excess - 0.5 * hsh) * dt + noise;
                for d in 0..n {
                    let mut dx = buf.mu[d] * dt;
                    for j in 0..k {
                        dx += buf.lambda[d * k + j] * dw[j];
                    }
                    x[d] += dx;
                }
                if !log_v.is_finite() {
                    return Err(Error::Simulation(format!(
                        "path {p}, step {}: non-finite log-wealth",
                        step + 1
                    )));
                }
                while next < marks.len() && step + 1 == marks[next] {
                    at_marks.push(log_v);
                    next += 1;
                }
            }
            Ok(at_marks)
        })
        .collect();
    let per_path = per_path?;

    let mut out = Vec::with_capacity(marks.len());
    for (mi, &mark) in marks.iter().enumerate() {
        let t = mark as f64 * dt;
        let z: Vec<f64> = per_path.iter().map(|lv| -0.5 * theta * lv[mi]).collect();
        let stats = exp_moment(&z);
        let j = -2.0 / theta * (stats.z_max + stats.w_mean.ln());
        let se = if cfg.n_paths > 1 {
            2.0 / theta * stats.w_sd / (stats.w_mean * (cfg.n_paths as f64).sqrt())
        } else {
            0.0
        };
        out.push(CriterionEstimate {
            value: j / t,
            std_error: se / t,
            n_paths: cfg.n_paths,
            horizon: t,
            ess: stats.ess,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Strategy comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub name: String,
    pub value: f64,
    pub std_error: f64,
    pub ess: f64,
    /// Estimate minus the reference estimate (first-listed strategy).
    pub gap_to_reference: f64,
    /// Paired (common-random-numbers) standard error of the gap.
    pub joint_std_error: f64,
    /// True when this strategy beats the reference by more than two joint
    /// standard errors: an optimality-violation alarm.
    pub beats_reference: bool,
}

/// Ranked comparison under common random numbers. The first-listed
/// strategy is the reference (normally the solver's optimal feedback).
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonTable {
    pub reference: String,
    /// Rows sorted by estimate, best first.
    pub rows: Vec<ComparisonRow>,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl ComparisonTable {
    pub fn alarms(&self) -> Vec<&ComparisonRow> {
        self.rows.iter().filter(|r| r.beats_reference).collect()
    }
}

/// Evaluates each named strategy on the same driving noise and ranks the
/// criterion estimates. Differences to the reference use the paired delta
/// method, so common random numbers sharpen the comparison.
pub fn compare_strategies(
    model: &MarketModel,
    strategies: &[(&str, &dyn StrategyRule)],
    x0: &[f64],
    v0: f64,
    horizon: f64,
    params: &ControlParams,
    cfg: &SimConfig,
) -> Result<ComparisonTable> {
    if strategies.is_empty() {
        return Err(Error::Config("need at least one strategy".into()));
    }
    let theta = params.theta();
    let coarse = SimConfig {
        record_stride: usize::MAX,
        ..*cfg
    };
    // per-strategy terminal z-samples, path-aligned by common random numbers
    let mut z_all: Vec<Vec<f64>> = Vec::with_capacity(strategies.len());
    for (_, rule) in strategies {
        let bundle = simulate(model, *rule, x0, v0, horizon, &coarse)?;
        z_all.push(bundle.terminal_log_v().map(|lv| -0.5 * theta * lv).collect());
    }
    let n_paths = cfg.n_paths as f64;
    let stats: Vec<ExpMoment> = z_all.iter().map(|z| exp_moment(z)).collect();
    let values: Vec<f64> = stats
        .iter()
        .map(|s| -2.0 / theta * (s.z_max + s.w_mean.ln()))
        .collect();

    let mut rows = Vec::with_capacity(strategies.len());
    for (idx, (name, _)) in strategies.iter().enumerate() {
        let s = &stats[idx];
        let se = 2.0 / theta * s.w_sd / (s.w_mean * n_paths.sqrt());
        let (gap, joint_se) = if idx == 0 {
            (0.0, 0.0)
        } else {
            // paired covariance of the shifted weights
            let (za, zb) = (&z_all[idx], &z_all[0]);
            let (sa, sb) = (&stats[idx], &stats[0]);
            let mut cov = 0.0;
            for p in 0..z_all[idx].len() {
                let wa = (za[p] - sa.z_max).exp();
                let wb = (zb[p] - sb.z_max).exp();
                cov += (wa - sa.w_mean) * (wb - sb.w_mean);
            }
            cov /= (z_all[idx].len() - 1) as f64;
            let var = (sa.w_sd * sa.w_sd) / (sa.w_mean * sa.w_mean)
                + (sb.w_sd * sb.w_sd) / (sb.w_mean * sb.w_mean)
                - 2.0 * cov / (sa.w_mean * sb.w_mean);
            let joint = 2.0 / theta * (var.max(0.0) / n_paths).sqrt();
            (values[idx] - values[0], joint)
        };
        rows.push(ComparisonRow {
            name: name.to_string(),
            value: values[idx],
            std_error: se,
            ess: s.ess,
            gap_to_reference: gap,
            joint_std_error: joint_se,
            beats_reference: idx != 0 && gap > 2.0 * joint_se && joint_se > 0.0,
        });
    }
    rows.sort_by(|a, b| {
        b.value
            .partial_cmp(&a.value)
            .unwrap()
            .then_with(|| a.name.cmp(&b.name))
    });
    Ok(ComparisonTable {
        reference: strategies[0].0.to_string(),
        rows,
        horizon,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
    })
}

// ---------------------------------------------------------------------------
// Game value
// ---------------------------------------------------------------------------

/// Simulates the controlled factor SDE under `(h_rule, omega_rule)` and
/// returns the path-averaged time average of the game running cost
/// `(1/T) integral r(X, h, omega) dt`.
///
/// Sign convention: on a constant model with the optimal fraction and zero
/// distortion the time average equals `-rho`, so the ergodic rate is
/// recovered as the negative of this value.
pub fn game_value_estimate(
    model: &MarketModel,
    h_rule: &dyn StrategyRule,
    omega_rule: &dyn DistortionRule,
    x0: &[f64],
    params: &ControlParams,
    cfg: &SimConfig,
    horizon: f64,
) -> Result<CriterionEstimate> {
    cfg.validate()?;
    let steps = steps_for(horizon, cfg.dt);
    let dt = horizon / steps as f64;
    let sqrt_dt = dt.sqrt();
    let m = model.m();
    let n = model.n();
    let k = model.noise_dim();
    let theta = params.theta();

    let per_path: Result<Vec<f64>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(path_seed(cfg.seed, p as u64));
            let mut x = x0.to_vec();
            let mut buf = CoeffBuf::new(m, n);
            let mut h = vec![0.0; m];
            let mut omega = vec![0.0; k];
            let mut dw = vec![0.0; k];
            let mut acc = 0.0;
            for step in 0..steps {
                let t = step as f64 * dt;
                model
                    .eval_into(&x, &mut buf)
                    .map_err(|e| Error::Simulation(format!("path {p}, step {step}: {e}")))?;
                h_rule.fractions_into(t, &x, &mut h);
                omega_rule.omega_into(&x, &mut omega);
                // running cost (theta/2+1)/2 h'SS'h - |omega|^2/theta - h'(a-r1) - r
                let mut hsh = 0.0;
                for j in 0..k {
                    let mut v = 0.0;
                    for l in 0..m {
                        v += h[l] * buf.sigma[l * k + j];
                    }
                    hsh += v * v;
                }
                let mut excess = 0.0;
                for l in 0..m {
                    excess += h[l] * (buf.a[l] - buf.r);
                }
                let omega2: f64 = omega.iter().map(|v| v * v).sum();
                acc += (0.5 * (0.5 * theta + 1.0) * hsh - omega2 / theta - excess - buf.r) * dt;

                for z in dw.iter_mut() {
                    *z = rng.sample::<f64, _>(StandardNormal) * sqrt_dt;
                }
                for d in 0..n {
                    let mut drift = buf.mu[d];
                    for j in 0..k {
                        drift += buf.lambda[d * k + j] * omega[j];
                    }
                    for l in 0..m {
                        let mut inner = 0.0;
                        for j in 0..k {
                            inner += buf.lambda[d * k + j] * buf.sigma[l * k + j];
                        }
                        drift += 0.5 * theta * h[l] * inner;
                    }
                    let mut dx = drift * dt;
                    for j in 0..k {
                        dx += buf.lambda[d * k + j] * dw[j];
                    }
                    x[d] += dx;
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Simulation(format!(
                        "path {p}, step {}: non-finite state",
                        step + 1
                    )));
                }
            }
            Ok(acc / horizon)
        })
        .collect();
    let per_path = per_path?;

    let n_paths = per_path.len();
    let mean = per_path.iter().sum::<f64>() / n_paths as f64;
    let var = if n_paths > 1 {
        per_path.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n_paths - 1) as f64
    } else {
        0.0
    };
    Ok(CriterionEstimate {
        value: mean,
        std_error: (var / n_paths as f64).sqrt(),
        n_paths,
        horizon,
        ess: n_paths as f64,
    })
}
