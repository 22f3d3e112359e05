//! Backpropagation against central finite differences on a small perturbed network.

use iimlp::{InterpretableMLP, NetworkConfig, SeededRng};

fn main() -> iimlp::Result<()> {
    let cfg = NetworkConfig { layers: 3, classes: 2, data_width: 4, sigma: 1.0, ..NetworkConfig::default() };
    let mut mlp = InterpretableMLP::init_identity(cfg)?;
    let mut rng = SeededRng::new(7);
    for l in 1..=mlp.layers() {
        for w in mlp.weight_mut(l).as_mut_slice() {
            *w += 0.3 * rng.standard_normal();
        }
    }
    let x: Vec<f64> = (0..mlp.data_width()).map(|_| 0.5 * rng.standard_normal()).collect();
    let u = mlp.pad(&x)?;
    let label = 1;

    let (loss, grads) = mlp.loss_and_gradients(&u, label)?;
    println!("loss {loss:.6}");
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for l in 1..=mlp.layers() {
        for k in 0..mlp.width() * mlp.width() {
            let mut plus = mlp.clone();
            plus.weight_mut(l).as_mut_slice()[k] += eps;
            let mut minus = mlp.clone();
            minus.weight_mut(l).as_mut_slice()[k] -= eps;
            let numeric = (plus.loss(&u, label) - minus.loss(&u, label)) / (2.0 * eps);
            let analytic = grads.per_layer[l - 1].as_slice()[k];
            worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6));
        }
    }
    println!("max relative error over {} weights: {worst:.2e}", mlp.layers() * mlp.width() * mlp.width());
    Ok(())
}
