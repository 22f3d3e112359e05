//! Train the 100-layer identity-initialized network on a Fashion-MNIST subset.
//!
//! Expects the four decompressed IDX files in `DIR`:
//!
//! ```text
//! cargo run --release --example fashion_mnist -- DIR [train_samples] [epochs] [out_dir]
//! ```
//!
//! Snapshots, `metrics.csv` and `final.iimlp` land in `out_dir` (default `runs/fashion`).

use std::path::{Path, PathBuf};

use iimlp::checkpoint::save_checkpoint;
use iimlp::data::{load_idx, normalize, NormalizationSpec};
use iimlp::trainer::{train, EpochMetrics, TrainConfig, TrainOutput};
use iimlp::{InterpretableMLP, NetworkConfig};

fn main() -> iimlp::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(dir) = args.first().map(PathBuf::from) else {
        eprintln!("usage: fashion_mnist DIR [train_samples] [epochs] [out_dir]");
        std::process::exit(2);
    };
    let n_train: usize = args.get(1).map_or(2000, |s| s.parse().expect("sample count"));
    let epochs: usize = args.get(2).map_or(50, |s| s.parse().expect("epoch count"));
    let out_dir = PathBuf::from(args.get(3).map_or("runs/fashion", String::as_str));

    let load = |images: &str, labels: &str| load_idx(dir.join(images), dir.join(labels));
    let spec = NormalizationSpec::per_sample(0.29);
    let train_set = normalize(&load("train-images-idx3-ubyte", "train-labels-idx1-ubyte")?.shuffled_take(n_train, 0), &spec)?;
    let test_set = normalize(&load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?.shuffled_take(1000, 0), &spec)?;
    println!("{} train / {} test samples", train_set.len(), test_set.len());

    let mlp = InterpretableMLP::init_identity(NetworkConfig::default())?;
    let tc = TrainConfig { epochs, learning_rate: 1e-3, snapshot_every: 10, ..TrainConfig::default() };
    let report = |m: &EpochMetrics| {
        println!(
            "epoch {:>3}  loss {:.4}  train {:.3}  test {:.3}  max|W-sI| {:.4}",
            m.epoch, m.train_loss, m.train_accuracy, m.test_accuracy, m.max_weight_deviation
        )
    };
    let out = train(mlp, &train_set, &test_set, &tc, TrainOutput { dir: Some(&out_dir), progress: Some(&report) })?;
    let path: &Path = &out_dir.join("final.iimlp");
    save_checkpoint(&out.mlp, path)?;
    println!("wrote {}", path.display());
    Ok(())
}
