//! The single-asset constant-coefficient problem has closed forms for the
//! optimal fraction, the growth rate, and the criterion; the minimizing
//! selector and a brute-force grid search must land on the same answer.
//!
//! ```sh
//! cargo run --release --example merton_closed_form
//! ```

use nalgebra::DMatrix;
use risk_hjb::control::{hamiltonian_k_theta, minimizing_selector, ControlParams};
use risk_hjb::market::MarketModel;
use risk_hjb::oracles::{brute_force_hamiltonian, merton_constant_oracle, merton_criterion_of_h};

fn main() -> risk_hjb::Result<()> {
    let (a, r, sigma2, theta) = (0.10, 0.03, 0.04, 2.0);
    let oracle = merton_constant_oracle(a, r, sigma2, theta, 1.0, 1.0)?;
    println!("closed form: h* = {}, rho = {}, J(T=1, v0=1) = {}",
        oracle.h_star, oracle.rho, oracle.criterion);

    let model = MarketModel::constant(
        vec![a],
        vec![0.0],
        DMatrix::from_row_slice(1, 2, &[sigma2.sqrt(), 0.0]),
        DMatrix::from_row_slice(1, 2, &[0.0, 0.3]),
        r,
    )?;
    let params = ControlParams::new(theta)?;

    let h = minimizing_selector(&model, &[0.0], &[0.0], &params)?;
    let k = hamiltonian_k_theta(&model, &[0.0], &[0.0], &params)?;
    println!("selector:    h* = {}, K_theta = {k} (= -rho)", h[0]);

    let scan = brute_force_hamiltonian(&model, &[0.0], &[0.0], &params, (&[-5.0], &[5.0]), 4001)?;
    println!(
        "brute force: argmin = {} (cell {:.4}), min = {}",
        scan.argmin[0], scan.cell[0], scan.min_value
    );

    println!("\ncriterion of constant fractions (quadratic in h):");
    for h in [0.0, 0.4375, 0.875, 1.3125, 1.75] {
        println!("  J({h:>6.4}) = {:.6}", merton_criterion_of_h(a, r, sigma2, theta, 1.0, 1.0, h));
    }
    Ok(())
}
