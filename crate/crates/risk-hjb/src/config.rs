//! Run configuration: one TOML file per run, sections for the model, grid,
//! solver, simulation, comparison, checks, oracle tolerances, and outputs.
//! Unknown keys are rejected; command-line `--set section.key=value` pairs
//! override the file before anything is built, so the file plus the
//! overrides fully determine a run.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::control::ControlParams;
use crate::error::{Error, Result};
use crate::ergodic::ErgodicSchedule;
use crate::hjb::{BoundaryRule, Scheme, SolverConfig};
use crate::market::{Grid, LinearGaussianSpec, MarketModel, SaturatingSpec};
use crate::sim::SimConfig;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub grid: GridSection,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub check: CheckSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `constant`, `linear`, or `bounded_nonlinear`.
    pub family: String,
    pub a0: Vec<f64>,
    #[serde(default)]
    pub a_mat: Vec<Vec<f64>>,
    pub b0: Vec<f64>,
    #[serde(default)]
    pub b_mat: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub r0: f64,
    /// Saturation scale of the bounded-nonlinear family.
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSection {
    pub theta: f64,
}

impl Default for ControlSection {
    fn default() -> Self {
        ControlSection { theta: 2.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub dt: f64,
    pub scheme: String,
    pub boundary: String,
    pub inner_iterations: usize,
    pub tolerance: f64,
    /// `finite` or `ergodic` (the solve subcommand's default mode).
    pub mode: String,
    pub horizon: f64,
    /// Ergodic schedule.
    pub t0: f64,
    pub max_horizon: f64,
    pub tol_u: f64,
    pub tol_rho: f64,
    /// Normalization point; empty means the domain center.
    pub x0: Vec<f64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            dt: 1e-3,
            scheme: "semi_implicit".into(),
            boundary: "linear_extrapolation".into(),
            inner_iterations: 1,
            tolerance: 1e-3,
            mode: "finite".into(),
            horizon: 1.0,
            t0: 1.0,
            max_horizon: 16384.0,
            tol_u: 1e-6,
            tol_rho: 1e-6,
            x0: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub record_stride: usize,
    pub horizon: f64,
    pub v0: f64,
    /// Start point; empty means the domain center.
    pub x0: Vec<f64>,
    /// Strategy descriptor: `optimal`, `stationary`, `zero`,
    /// `scaled:<factor>`, or `const:<h1,h2,...>`.
    pub strategy: String,
    /// Evaluation horizons for the long-run trend (empty: single horizon).
    pub horizons: Vec<f64>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            dt: 1e-3,
            n_paths: 10_000,
            seed: 1,
            record_stride: 1_000_000,
            horizon: 1.0,
            v0: 1.0,
            x0: Vec::new(),
            strategy: "optimal".into(),
            horizons: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    /// Strategy descriptors; the first entry is the reference.
    pub strategies: Vec<String>,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection {
            strategies: vec![
                "optimal".into(),
                "scaled:0.8".into(),
                "scaled:1.2".into(),
                "zero".into(),
            ],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSection {
    pub pair_samples: usize,
    /// Radii for the Lyapunov probe of the quadratic candidate; empty skips it.
    pub lyapunov_radii: Vec<f64>,
    pub h_box: f64,
    pub omega_box: f64,
}

impl Default for CheckSection {
    fn default() -> Self {
        CheckSection {
            pair_samples: 200,
            lyapunov_radii: Vec::new(),
            h_box: 5.0,
            omega_box: 5.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    /// Pass threshold on the value-function error.
    pub tolerance_u: f64,
    /// Pass threshold on scalar quantities (fractions, rates).
    pub tolerance_scalar: f64,
    /// Time mesh of the Riccati integration.
    pub time_steps: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            tolerance_u: 1e-2,
            tolerance_scalar: 1e-4,
            time_steps: 4000,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    /// Write full field CSVs (can be large).
    pub write_fields: bool,
    /// Write the full path dump (large; summary statistics are always written).
    pub write_paths: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "out".into(),
            write_fields: true,
            write_paths: false,
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing and overrides
// ---------------------------------------------------------------------------

impl RunConfig {
    /// Parses a TOML document, applying `--set section.key=value` overrides
    /// before deserialization. Fails with the parser's line/field
    /// diagnostics; unknown keys are rejected.
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
        let doc: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("config parse failure: {e}")))?;
        let mut doc = toml::Value::Table(doc);
        for (path, raw) in overrides {
            apply_override(&mut doc, path, raw)?;
        }
        let cfg: RunConfig = doc
            .try_into()
            .map_err(|e| Error::Config(format!("config field failure: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path, overrides: &[(String, String)]) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_toml(&text, overrides)
    }

    fn validate(&self) -> Result<()> {
        if self.grid.lower.len() != self.grid.upper.len()
            || self.grid.lower.len() != self.grid.points.len()
        {
            return Err(Error::Config("grid vectors must share one length".into()));
        }
        match self.solver.mode.as_str() {
            "finite" | "ergodic" => {}
            other => {
                return Err(Error::Config(format!(
                    "solver.mode must be 'finite' or 'ergodic' (got '{other}')"
                )))
            }
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<Grid> {
        Grid::new(
            self.grid.lower.clone(),
            self.grid.upper.clone(),
            self.grid.points.clone(),
        )
    }

    pub fn build_params(&self) -> Result<ControlParams> {
        ControlParams::new(self.control.theta)
    }

    pub fn build_solver_config(&self) -> Result<SolverConfig> {
        let scheme = match self.solver.scheme.as_str() {
            "semi_implicit" => Scheme::SemiImplicit,
            "explicit" => Scheme::Explicit,
            other => {
                return Err(Error::Config(format!(
                    "solver.scheme must be 'semi_implicit' or 'explicit' (got '{other}')"
                )))
            }
        };
        let boundary = match self.solver.boundary.as_str() {
            "linear_extrapolation" => BoundaryRule::LinearExtrapolation,
            "zero_second_derivative" => BoundaryRule::ZeroSecondDerivative,
            other => {
                return Err(Error::Config(format!(
                    "solver.boundary must be 'linear_extrapolation' or 'zero_second_derivative' (got '{other}')"
                )))
            }
        };
        Ok(SolverConfig {
            dt: self.solver.dt,
            scheme,
            boundary,
            inner_iterations: self.solver.inner_iterations,
            tolerance: self.solver.tolerance,
        })
    }

    pub fn build_schedule(&self) -> ErgodicSchedule {
        ErgodicSchedule {
            t0: self.solver.t0,
            max_horizon: self.solver.max_horizon,
            tol_u: self.solver.tol_u,
            tol_rho: self.solver.tol_rho,
        }
    }

    pub fn build_sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.simulation.dt,
            n_paths: self.simulation.n_paths,
            seed: self.simulation.seed,
            record_stride: self.simulation.record_stride,
        }
    }

    /// Simulation start point (domain center when unset).
    pub fn sim_start(&self, grid: &Grid) -> Result<Vec<f64>> {
        if self.simulation.x0.is_empty() {
            Ok(grid.node(grid.center_node()))
        } else if self.simulation.x0.len() == grid.dim() {
            Ok(self.simulation.x0.clone())
        } else {
            Err(Error::Config("simulation.x0 has the wrong dimension".into()))
        }
    }

    pub fn build_model(&self) -> Result<MarketModel> {
        let m = self.model.a0.len();
        let n = self.model.b0.len();
        let k = m + n;
        let sigma = matrix_from(&self.model.sigma, m, k, "model.sigma")?;
        let lambda = matrix_from(&self.model.lambda, n, k, "model.lambda")?;
        match self.model.family.as_str() {
            "constant" => MarketModel::constant(
                self.model.a0.clone(),
                self.model.b0.clone(),
                sigma,
                lambda,
                self.model.r0,
            ),
            "linear" => MarketModel::from_linear(&self.linear_spec()?),
            "bounded_nonlinear" => MarketModel::saturating(&SaturatingSpec {
                a0: DVector::from_vec(self.model.a0.clone()),
                a_mat: matrix_from(&self.model.a_mat, m, n, "model.a_mat")?,
                b0: DVector::from_vec(self.model.b0.clone()),
                b_mat: matrix_from(&self.model.b_mat, n, n, "model.b_mat")?,
                sigma,
                lambda,
                r0: self.model.r0,
                scale: self.model.scale,
            }),
            other => Err(Error::Config(format!(
                "model.family must be 'constant', 'linear', or 'bounded_nonlinear' (got '{other}')"
            ))),
        }
    }

    /// The linear-Gaussian view of the model (required by the Riccati oracle).
    pub fn linear_spec(&self) -> Result<LinearGaussianSpec> {
        let m = self.model.a0.len();
        let n = self.model.b0.len();
        let k = m + n;
        let a_mat = if self.model.a_mat.is_empty() {
            DMatrix::zeros(m, n)
        } else {
            matrix_from(&self.model.a_mat, m, n, "model.a_mat")?
        };
        let b_mat = if self.model.b_mat.is_empty() {
            DMatrix::zeros(n, n)
        } else {
            matrix_from(&self.model.b_mat, n, n, "model.b_mat")?
        };
        Ok(LinearGaussianSpec {
            a0: DVector::from_vec(self.model.a0.clone()),
            a_mat,
            b0: DVector::from_vec(self.model.b0.clone()),
            b_mat,
            sigma: matrix_from(&self.model.sigma, m, k, "model.sigma")?,
            lambda: matrix_from(&self.model.lambda, n, k, "model.lambda")?,
            r0: self.model.r0,
        })
    }
}

fn matrix_from(rows: &[Vec<f64>], nr: usize, nc: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Config(format!("{what} must be a {nr} x {nc} matrix")));
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(DMatrix::from_row_slice(nr, nc, &flat))
}

fn apply_override(doc: &mut toml::Value, path: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.len() < 2 {
        return Err(Error::Usage(format!(
            "override path '{path}' must be section.key"
        )));
    }
    // parse the value as TOML; fall back to a bare string
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(t) => t.get("v").cloned().unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut cursor = doc;
    for part in &parts[..parts.len() - 1] {
        let table = cursor.as_table_mut().ok_or_else(|| {
            Error::Usage(format!("override path '{path}': '{part}' is not a table"))
        })?;
        cursor = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = cursor
        .as_table_mut()
        .ok_or_else(|| Error::Usage(format!("override path '{path}' is not a table")))?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}
