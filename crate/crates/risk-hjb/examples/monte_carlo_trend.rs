//! Long-run Monte Carlo trend of the normalized criterion `J/T` under the
//! stationary strategy: the sequence approaches the ergodic rate computed
//! by the PDE limit procedure.
//!
//! ```sh
//! cargo run --release --example monte_carlo_trend
//! ```

use nalgebra::{DMatrix, DVector};
use risk_hjb::control::ControlParams;
use risk_hjb::ergodic::{solve_ergodic, stationary_strategy, ErgodicSchedule};
use risk_hjb::hjb::SolverConfig;
use risk_hjb::market::{Grid, MarketModel, SaturatingSpec};
use risk_hjb::sim::{estimate_criterion_ergodic, SimConfig};

fn main() -> risk_hjb::Result<()> {
    let model = MarketModel::saturating(&SaturatingSpec {
        a0: DVector::from_vec(vec![0.10]),
        a_mat: DMatrix::from_row_slice(1, 1, &[0.05]),
        b0: DVector::zeros(1),
        b_mat: DMatrix::from_row_slice(1, 1, &[-1.0]),
        sigma: DMatrix::from_row_slice(1, 2, &[0.2, 0.0]),
        lambda: DMatrix::from_row_slice(1, 2, &[0.0, 0.3]),
        r0: 0.03,
        scale: 2.0,
    })?;
    let params = ControlParams::new(2.0)?;
    let grid = Grid::line(-3.0, 3.0, 301)?;
    let sol = solve_ergodic(
        &model,
        &params,
        &grid,
        None,
        &SolverConfig {
            dt: 2e-3,
            ..SolverConfig::default()
        },
        &ErgodicSchedule::default(),
    )?;
    let strat = stationary_strategy(&sol, &model, &params)?;

    let cfg = SimConfig {
        dt: 4e-3,
        n_paths: 20_000,
        seed: 515,
        record_stride: usize::MAX,
    };
    let ests = estimate_criterion_ergodic(
        &model,
        &strat,
        &sol.x0,
        1.0,
        &params,
        &cfg,
        &[1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
    )?;
    println!("PDE ergodic rate: rho = {:.6}\n", sol.rho);
    println!("{:>6} {:>12} {:>10} {:>10}", "T", "J/T", "se", "ess");
    for est in &ests {
        println!(
            "{:>6} {:>12.6} {:>10.2e} {:>10.0}",
            est.horizon, est.value, est.std_error, est.ess
        );
    }
    Ok(())
}
