//! Sampling-based assumption checks: boundedness/Lipschitz estimates,
//! uniform ellipticity, and a Lyapunov probe of the controlled generator.
//!
//! ```sh
//! cargo run --release --example check_assumptions
//! ```

use nalgebra::{DMatrix, DVector};
use risk_hjb::control::ControlParams;
use risk_hjb::market::{
    check_lyapunov, validate_assumptions, ControlBox, Grid, LyapunovCandidate, MarketModel,
    SaturatingSpec,
};

fn main() -> risk_hjb::Result<()> {
    // mean-reverting factor, saturating excess return, bounded coefficients
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
    let grid = Grid::line(-3.0, 3.0, 301)?;

    let report = validate_assumptions(&model, &grid, 2000)?;
    println!("sampled Lipschitz estimates (lower bounds):");
    println!("  a: {:.4}  mu: {:.4}  sigma: {:.4}  lambda: {:.4}  r: {:.4}",
        report.lipschitz_estimates.a,
        report.lipschitz_estimates.mu,
        report.lipschitz_estimates.sigma,
        report.lipschitz_estimates.lambda,
        report.lipschitz_estimates.r);
    println!("sup-norm bounds on the grid:");
    println!("  a: {:.4}  mu: {:.4}  r: {:.4}",
        report.bound_estimates.a, report.bound_estimates.mu, report.bound_estimates.r);
    println!("uniform ellipticity delta0 = {:.6}", report.ellipticity_delta0);
    println!("A1 (bounded Lipschitz): {}", if report.pass_a1 { "pass" } else { "FAIL" });
    println!("A2 (uniform ellipticity): {}", if report.pass_a2 { "pass" } else { "FAIL" });
    for w in &report.warnings {
        println!("warning: {w}");
    }

    // probe the stability condition with the quadratic candidate v = |x|^2
    let params = ControlParams::new(2.0)?;
    let cand = LyapunovCandidate::norm_squared(model.n());
    let cbox = ControlBox::symmetric(model.m(), model.noise_dim(), 2.0, 2.0);
    let lyap = check_lyapunov(&model, &cand, &params, &[1.0, 2.0, 4.0, 8.0], &cbox)?;
    println!("\nLyapunov probe of L^(h,w) |x|^2 over the control box:");
    for (r, v) in lyap.radii.iter().zip(&lyap.max_generator) {
        println!("  radius {r:>4}: max generator = {v:>10.4}");
    }
    println!(
        "consistent with the stability condition: {}",
        lyap.consistent_with_a3
    );
    Ok(())
}
