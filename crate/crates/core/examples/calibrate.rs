//! Pick `(sigma, q*)` for a deep identity-initialized network.
//!
//! ```text
//! cargo run --release --example calibrate -- 0.8 100
//! ```

use iimlp::sigprop::{calibrate, solve_fixed_point, theoretical_spectrum, FixedPointProblem};

fn main() -> iimlp::Result<()> {
    let mut args = std::env::args().skip(1);
    let target: f64 = args.next().map_or(0.8, |s| s.parse().expect("target mass"));
    let layers: usize = args.next().map_or(100, |s| s.parse().expect("layer count"));

    let cal = calibrate(target, layers)?;
    println!("target mass {target} over {layers} layers");
    println!("  sigma = {:.12}", cal.sigma);
    println!("  q*    = {:.9}", cal.q_star);
    println!("  mass  = {:.9}", cal.mass_at_atom);

    // How the atom mass moves as sigma leaves 1.
    println!("\n{:>12} {:>10} {:>10} {:>12}", "sigma", "q*", "mass", "atom");
    for k in [2, 4, 8, 16, 32] {
        let sigma = 1.0 + 1e-4 * k as f64;
        let q = solve_fixed_point(&FixedPointProblem::for_depth(sigma, layers), 0.29)?;
        let s = theoretical_spectrum(sigma, layers, q);
        println!("{sigma:>12.6} {q:>10.6} {:>10.6} {:>12.6}", s.mass_at_atom, s.atom_value);
    }
    Ok(())
}
