//! Interpretability probes on a small trained network: contribution maps exported as PGM,
//! the class-likelihood series of one sample and the discriminability table.
//!
//! ```text
//! cargo run --release --example contribution_maps -- [out_dir]
//! ```

use std::fs;
use std::path::PathBuf;

use iimlp::data::{normalize, synth_blobs, NormalizationSpec};
use iimlp::interpret::{
    contribution_map, discriminability, export_map_image, likelihood_series, DiscriminabilityOptions, MapLayout,
};
use iimlp::trainer::{train, TrainConfig, TrainOutput};
use iimlp::{InterpretableMLP, NetworkConfig, SeededRng};

fn main() -> iimlp::Result<()> {
    let out_dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/maps".into()));
    fs::create_dir_all(&out_dir).map_err(|e| iimlp::Error::io(&out_dir, e))?;

    let spec = NormalizationSpec::per_sample(0.29);
    let mut rng = SeededRng::new(4);
    let data = normalize(&synth_blobs(3, 16, 60, 8.0, &mut rng)?, &spec)?;
    let cfg = NetworkConfig { layers: 12, classes: 3, data_width: 16, ..NetworkConfig::default() };
    let untrained = InterpretableMLP::init_identity(cfg)?;
    let tc = TrainConfig { epochs: 15, batch_size: 16, ..TrainConfig::default() };
    let mlp = train(untrained, &data, &data, &tc, TrainOutput::default())?.mlp;

    let sample = 0;
    let trace = mlp.forward(&mlp.pad(data.samples[sample].as_slice())?);
    let layout = MapLayout::for_width(mlp.data_width()).expect("16 is a square");
    for layer in [4, 8, 12] {
        let map = contribution_map(&trace, layer, sample);
        let path = out_dir.join(format!("map_s{sample}_l{layer}.{}", layout.extension()));
        export_map_image(&map, layout, &path)?;
        let energy: f64 = map.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("layer {layer:>2}: |x^l - x^0| = {energy:.4} -> {}", path.display());
    }

    println!("\nlikelihood z^l of sample {sample} (label {}):", data.labels[sample]);
    for (l, z) in likelihood_series(&trace).iter().enumerate().step_by(3) {
        let row: Vec<String> = z.iter().map(|v| format!("{v:+.3}")).collect();
        println!("  {l:>2} [{}]", row.join(", "));
    }

    let table = discriminability(&mlp, &data, &DiscriminabilityOptions::default());
    println!("\ndiscriminability (same class vs other classes):");
    for l in (2..=mlp.layers()).step_by(2) {
        println!("  {l:>2} {:+.3} {:+.3}", table.diagonal_mean(l), table.off_diagonal_mean(l));
    }
    Ok(())
}
