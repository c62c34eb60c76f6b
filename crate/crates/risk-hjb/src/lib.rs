//! Risk-sensitive portfolio optimization in factor-diffusion markets.
//!
//! Asset drifts and volatilities are driven by a diffusion of economic
//! factors; the investor maximizes the risk-sensitive criterion
//! `(-2/theta) ln E[V(T)^(-theta/2)]` over self-financing strategies. The
//! toolkit solves the associated semilinear HJB equation by finite
//! differences, extracts optimal feedback strategies, computes the ergodic
//! (long-run) growth rate as the long-horizon limit of an auxiliary Cauchy
//! problem, and verifies everything against closed-form oracles and Monte
//! Carlo simulation.
//!
//! | Module      | What it provides                                                      |
//! |-------------|-----------------------------------------------------------------------|
//! | [`market`]  | model families, spatial grid, assumption checkers                      |
//! | [`control`] | Hamiltonian, minimizing selector, running cost, saddle controls        |
//! | [`hjb`]     | backward finite-difference solver, transforms, strategy extraction     |
//! | [`ergodic`] | long-horizon limit, Isaacs check, stationary strategy, diagnostics     |
//! | [`sim`]     | Euler-Maruyama paths, criterion estimators, strategy comparison        |
//! | [`oracles`] | Merton closed form, Riccati ODE oracle, brute-force optimizers         |
//! | [`config`]  | TOML run configuration                                                 |
//! | [`report`]  | CSV/JSON artifact writers                                              |
//! | [`cli`]     | `check`/`solve`/`simulate`/`evaluate`/`compare`/`oracle-compare`       |
//!
//! Every run is reproducible: simulation substreams are derived from
//! `(seed, path index)`, reductions are order-fixed, and artifacts are
//! byte-identical across reruns and worker counts.

pub mod cli;
pub mod config;
pub mod control;
pub mod ergodic;
pub mod error;
pub mod hjb;
mod linalg;
pub mod market;
pub mod oracles;
pub mod report;
pub mod sim;

pub use error::{Error, Result};
