//! Monte-Carlo check of signal propagation and the Jacobian spectrum at initialization.
//!
//! Gaussian inputs with variance `q*` are pushed through an identity-initialized hard-tanh
//! network. The per-layer variance is compared against `q*`, and the fraction of Jacobian
//! eigenvalues sitting at `sigma^{2L}` against the closed-form mass.
//!
//! ```text
//! cargo run --release --example propagate -- [samples]
//! ```

use iimlp::sigprop::{
    empirical_spectrum_at_init, monte_carlo_profile, solve_fixed_point, theoretical_spectrum, FixedPointProblem,
};
use iimlp::{InterpretableMLP, NetworkConfig, SeededRng};

fn main() -> iimlp::Result<()> {
    let samples: usize = std::env::args().nth(1).map_or(200, |s| s.parse().expect("sample count"));
    let mut cfg = NetworkConfig::default();
    cfg.q_star = solve_fixed_point(&FixedPointProblem::for_depth(cfg.sigma, cfg.layers), 0.29)?;
    println!("sigma {} L {} N {} q* {:.6}", cfg.sigma, cfg.layers, cfg.data_width, cfg.q_star);

    let profile = monte_carlo_profile(&cfg, &mut SeededRng::new(1), samples)?;
    println!("\n{:>5} {:>10} {:>10}", "layer", "q_l", "saturated");
    for l in [1, 2, 5, 10, 25, 50, 75, 100] {
        println!(
            "{l:>5} {:>10.5} {:>10.5}",
            profile.per_layer_variance[l - 1],
            profile.per_layer_saturation_fraction[l - 1]
        );
    }
    println!("max relative drift from q*: {:.4}", profile.max_relative_drift(cfg.q_star));

    let theory = theoretical_spectrum(cfg.sigma, cfg.layers, cfg.q_star);
    let empirical = empirical_spectrum_at_init(&cfg, &mut SeededRng::new(2), samples)?;
    println!("\natom at sigma^2L = {:.6}", theory.atom_value);
    println!("  theory    mass {:.4}", theory.mass_at_atom);
    println!("  empirical mass {:.4}", empirical.summary.mass_at_atom);

    // At identity init the Jacobian is diagonal, so its top singular value is sigma^L whenever
    // nothing saturates.
    let mlp = InterpretableMLP::init_identity(NetworkConfig { sigma: 1.0 + 8e-4, ..cfg })?;
    let u = mlp.pad(&vec![0.01; mlp.data_width()])?;
    let s = mlp.top_singular_value(&u, &mut SeededRng::new(3), 20);
    println!("\ntop singular value {s:.9}, sigma^L {:.9}", mlp.config().sigma.powi(mlp.layers() as i32));
    Ok(())
}
