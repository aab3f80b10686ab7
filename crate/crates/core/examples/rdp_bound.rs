//! Renyi bound of the dithered variant: it explodes as the dither vanishes.
//!
//! cargo run --example rdp_bound

use ferret_lab::accountant::rdp_order_sweep;

fn main() -> ferret_lab::Result<()> {
    let orders = [1.5, 2.0, 4.0, 8.0, 16.0, 32.0];
    println!("{:>10} {:>8} {:>16}", "sigma_d", "alpha", "ln bound");
    for sigma_d in [10.0, 3.0, 1.0, 0.3, 0.1, 1e-2, 1e-4, 1e-6] {
        let (alpha, bound) = rdp_order_sweep(0.1, 1.0, sigma_d, &orders)?;
        println!("{sigma_d:>10} {alpha:>8} {:>16.6e}", bound.ln_value);
    }
    Ok(())
}
