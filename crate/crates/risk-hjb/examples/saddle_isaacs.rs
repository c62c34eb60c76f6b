//! The stationary equation in game form: iterated sup/inf of the game
//! integrand agree (the integrand is concave in the distortion and convex
//! in the fractions), and the closed-form saddle controls dominate every
//! grid alternative.
//!
//! ```sh
//! cargo run --release --example saddle_isaacs
//! ```

use nalgebra::{DMatrix, DVector};
use risk_hjb::control::{saddle_controls, ControlParams};
use risk_hjb::ergodic::isaacs_check;
use risk_hjb::market::{MarketModel, SaturatingSpec};
use risk_hjb::oracles::{brute_force_saddle, saddle_inequality_gaps};

fn main() -> risk_hjb::Result<()> {
    // block-orthogonal loadings: sigma Lambda' = 0, the clean saddle case
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
    let h_box: (&[f64], &[f64]) = (&[-3.0], &[3.0]);
    let omega_box: (&[f64], &[f64]) = (&[-2.0, -2.0], &[2.0, 2.0]);

    println!(
        "{:>5} {:>6} {:>12} {:>12} {:>10} {:>10} {:>9} {:>9}",
        "x", "grad", "sup inf", "inf sup", "|gap|", "bound", "h_bar", "|w_bar|"
    );
    for (x, grad) in [(0.0, 0.0), (1.0, 0.25), (-1.5, -0.4), (2.0, 0.8)] {
        let (supinf, infsup) =
            isaacs_check(&model, &params, &[x], &[grad], h_box, omega_box, (61, 61))?;
        let scan = brute_force_saddle(&model, &[x], &[grad], &params, h_box, omega_box, (61, 61))?;
        let ctrl = saddle_controls(&model, &[x], &[grad], &params)?;
        let (w_gap, h_gap) = saddle_inequality_gaps(
            &model,
            &[x],
            &[grad],
            &params,
            ctrl.h.as_slice(),
            ctrl.omega.as_slice(),
            h_box,
            omega_box,
            (61, 61),
        )?;
        assert!(w_gap <= 1e-10 && h_gap <= 1e-10, "saddle inequalities violated");
        println!(
            "{x:>5.1} {grad:>6.2} {supinf:>12.6} {infsup:>12.6} {:>10.2e} {:>10.2e} {:>9.4} {:>9.4}",
            (supinf - infsup).abs(),
            scan.resolution_bound,
            ctrl.h[0],
            ctrl.omega.norm()
        );
    }
    println!("\nsaddle inequalities hold at every probe (both gaps <= 1e-10)");
    Ok(())
}
