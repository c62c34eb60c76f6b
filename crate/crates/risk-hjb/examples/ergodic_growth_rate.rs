//! The ergodic growth rate as a long-horizon limit: the auxiliary Cauchy
//! problem runs on a geometric checkpoint schedule until the normalized
//! field is Cauchy and the time derivative flattens to a constant, which is
//! the optimal long-run risk-sensitive growth rate.
//!
//! ```sh
//! cargo run --release --example ergodic_growth_rate
//! ```

use nalgebra::{DMatrix, DVector};
use risk_hjb::control::ControlParams;
use risk_hjb::ergodic::{
    compute_qbu, ergodic_residual, solve_ergodic, stationary_strategy, ErgodicSchedule,
};
use risk_hjb::hjb::SolverConfig;
use risk_hjb::market::{validate_assumptions, Grid, MarketModel, SaturatingSpec};

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
    let cfg = SolverConfig {
        dt: 1e-3,
        ..SolverConfig::default()
    };

    let sol = solve_ergodic(&model, &params, &grid, None, &cfg, &ErgodicSchedule::default())?;
    println!("checkpoint history (geometric horizons):");
    for rec in &sol.history {
        println!(
            "  T = {:>6}: cauchy increment = {:>10.3e}, rate mean = {:.8}, rate std = {:.2e}",
            rec.horizon, rec.cauchy_increment, rec.rate_mean, rec.rate_std
        );
    }
    println!(
        "\nrho = {:.8} (converged at T = {}, stationary residual {:.2e})",
        sol.rho,
        sol.converged_horizon,
        ergodic_residual(&sol, &model, &params)?
    );
    println!(
        "bias grows toward the boundary on {:.0}% of axis rays",
        100.0 * sol.boundary_growth_fraction
    );

    let strat = stationary_strategy(&sol, &model, &params)?;
    println!("\nbias and stationary strategy:");
    for x in [-2.0, -1.0, 0.0, 1.0, 2.0] {
        let i = grid.nearest_node(&[x]);
        println!(
            "  x = {x:>4.1}: u^ = {:>9.6}, h = {:>7.4}",
            sol.u_hat.value(0, i),
            strat.fractions(0, i)[0]
        );
    }

    // gradient-bound diagnostic along the history
    let delta0 = validate_assumptions(&model, &grid, 200)?.ellipticity_delta0;
    let qbu = compute_qbu(&model, &params, &sol, 1.0, delta0)?;
    println!("\ngradient-bound lhs max per checkpoint (should settle negative):");
    for (rec, lhs) in sol.history.iter().zip(&qbu.lhs_max_per_checkpoint) {
        println!("  T = {:>6}: {lhs:>10.3e}", rec.horizon);
    }
    Ok(())
}
