//! Mini-batch momentum SGD with deterministic shuffling and per-epoch metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::interpret;
use crate::linalg::{argmax, Matrix};
use crate::network::InterpretableMLP;
use crate::rng::SeededRng;

/// Rows per batched forward pass during evaluation.
pub const EVAL_BATCH: usize = 250;

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,test_acc,max_w_dev,frob_w_dev,wall_time_s";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub shuffle_seed: u64,
    /// Write a checkpoint and probe CSVs every this many epochs; 0 disables snapshots.
    pub snapshot_every: usize,
    /// Train on a seeded random subset of this size.
    pub train_subset: Option<usize>,
    /// Elementwise gradient clipping threshold; off when `None`.
    pub grad_clip: Option<f64>,
    /// Fill the `wall_time_s` column of `metrics.csv`. Off by default so reruns stay byte-identical.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            shuffle_seed: 0,
            snapshot_every: 0,
            train_subset: None,
            grad_clip: None,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::InvalidConfig(format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean loss over the epoch's mini-batches (pre-update weights).
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub max_weight_deviation: f64,
    pub frobenius_weight_deviation: f64,
    pub wall_time_s: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self, with_wall_time: bool) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.train_accuracy,
            self.test_accuracy,
            self.max_weight_deviation,
            self.frobenius_weight_deviation,
            if with_wall_time { self.wall_time_s } else { 0.0 }
        )
    }
}

/// Deviation of one layer from its initialization `sigma * I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerDeviation {
    pub layer: usize,
    pub max_abs: f64,
    pub frobenius: f64,
    /// 99th percentile of the entrywise absolute deviations (nearest rank).
    pub p99_abs: f64,
}

/// Entrywise statistics of `W^l - sigma I` for every layer, `sigma` taken from the config.
pub fn weight_deviation(mlp: &InterpretableMLP) -> Vec<LayerDeviation> {
    let sigma = mlp.config().sigma;
    mlp.weights()
        .iter()
        .enumerate()
        .map(|(idx, w)| {
            let n = w.rows();
            let mut abs: Vec<f64> = w
                .as_slice()
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let target = if k / n == k % n { sigma } else { 0.0 };
                    (v - target).abs()
                })
                .collect();
            let frobenius = abs.iter().map(|d| d * d).sum::<f64>().sqrt();
            let max_abs = abs.iter().copied().fold(0.0, f64::max);
            let rank = ((0.99 * abs.len() as f64).ceil() as usize).clamp(1, abs.len()) - 1;
            let (_, p99, _) = abs.select_nth_unstable_by(rank, |a, b| a.total_cmp(b));
            LayerDeviation {
                layer: idx + 1,
                max_abs,
                frobenius,
                p99_abs: *p99,
            }
        })
        .collect()
}

pub fn weight_deviation_csv(devs: &[LayerDeviation]) -> String {
    let mut out = String::from("layer,max_abs,frobenius,p99_abs\n");
    for d in devs {
        let _ = writeln!(out, "{},{},{},{}", d.layer, d.max_abs, d.frobenius, d.p99_abs);
    }
    out
}

fn deviation_summary(mlp: &InterpretableMLP) -> (f64, f64) {
    let devs = weight_deviation(mlp);
    let max = devs.iter().map(|d| d.max_abs).fold(0.0, f64::max);
    let frob = devs.iter().map(|d| d.frobenius * d.frobenius).sum::<f64>().sqrt();
    (max, frob)
}

/// Fraction of samples whose `argmax z^L` equals the label; ties go to the lowest class.
///
/// `softmax` is monotone, so the argmax is read from the logits directly.
pub fn evaluate(mlp: &InterpretableMLP, dataset: &Dataset) -> f64 {
    if dataset.is_empty() {
        return 0.0;
    }
    let c = mlp.classes();
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let logits = mlp.logits_batch(&dataset.padded_batch(chunk));
        for (row, &i) in logits.chunks_exact(c).zip(chunk) {
            if argmax(row) == dataset.labels[i] {
                correct += 1;
            }
        }
    }
    correct as f64 / dataset.len() as f64
}

fn check_compatible(mlp: &InterpretableMLP, ds: &Dataset, role: &str) -> Result<()> {
    if ds.width != mlp.data_width() {
        return Err(Error::shape(format!("{role} dataset width"), mlp.data_width(), ds.width));
    }
    if ds.classes > mlp.classes() {
        return Err(Error::shape(format!("{role} dataset classes"), mlp.classes(), ds.classes));
    }
    Ok(())
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub mlp: InterpretableMLP,
    /// Snapshot checkpoints written, in order.
    pub checkpoints: Vec<PathBuf>,
}

/// Where snapshots and `metrics.csv` go, and who hears about finished epochs.
#[derive(Clone, Copy, Default)]
pub struct TrainOutput<'a> {
    pub dir: Option<&'a Path>,
    pub progress: Option<&'a dyn Fn(&EpochMetrics)>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Momentum SGD: `v <- momentum * v + g`, `W <- W - lr * v`, gradients averaged over the batch.
///
/// Metrics are computed after each epoch. With an output directory, `metrics.csv` is rewritten
/// after every epoch and snapshots `ckpt_epoch{k}.iimlp` plus `layer_accuracy_epoch{k}.csv` are
/// written every `snapshot_every` epochs.
pub fn train(
    mut mlp: InterpretableMLP,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
    out: TrainOutput<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_compatible(&mlp, train_set, "train")?;
    check_compatible(&mlp, test_set, "test")?;
    let train_set = match cfg.train_subset {
        Some(n) => train_set.shuffled_take(n, cfg.shuffle_seed),
        None => train_set.clone(),
    };
    if train_set.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    if let Some(dir) = out.dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let m = mlp.width();
    let mut velocity = vec![Matrix::zeros(m, m); mlp.layers()];
    let mut rng = SeededRng::new(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut checkpoints = Vec::new();
    let mut csv = format!("{METRICS_HEADER}\n");
    let start = Instant::now();

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let inputs = train_set.padded_batch(batch);
            let labels: Vec<usize> = batch.iter().map(|&i| train_set.labels[i]).collect();
            let stats = mlp.backward_batch(&inputs, &labels, |layer, grad, w| {
                let v = &mut velocity[layer - 1];
                let g = grad.as_slice();
                for ((vi, wi), &gi) in v.as_mut_slice().iter_mut().zip(w.as_mut_slice()).zip(g) {
                    let gi = match cfg.grad_clip {
                        Some(c) => gi.clamp(-c, c),
                        None => gi,
                    };
                    *vi = cfg.momentum * *vi + gi;
                    *wi -= cfg.learning_rate * *vi;
                }
            });
            match stats {
                Ok(s) => loss_sum += s.loss_sum,
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::Diverged {
                        epoch,
                        last_checkpoint: checkpoints.last().cloned(),
                    })
                }
                Err(e) => return Err(e),
            }
        }
        if mlp.weights().iter().any(|w| !w.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                last_checkpoint: checkpoints.last().cloned(),
            });
        }

        let (max_dev, frob_dev) = deviation_summary(&mlp);
        let row = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: evaluate(&mlp, &train_set),
            test_accuracy: evaluate(&mlp, test_set),
            max_weight_deviation: max_dev,
            frobenius_weight_deviation: frob_dev,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        let _ = writeln!(csv, "{}", row.csv_row(cfg.record_wall_time));
        if let Some(progress) = out.progress {
            progress(&row);
        }
        metrics.push(row);

        if let Some(dir) = out.dir {
            write(&dir.join("metrics.csv"), &csv)?;
            if cfg.snapshot_every > 0 && epoch % cfg.snapshot_every == 0 {
                let ckpt = dir.join(format!("ckpt_epoch{epoch}.iimlp"));
                save_checkpoint(&mlp, &ckpt)?;
                let curve = interpret::layerwise_accuracy(&mlp, test_set);
                write(&dir.join(format!("layer_accuracy_epoch{epoch}.csv")), curve.to_csv())?;
                checkpoints.push(ckpt);
            }
        }
    }
    Ok(TrainOutcome {
        metrics,
        mlp,
        checkpoints,
    })
}

pub fn metrics_csv(metrics: &[EpochMetrics], with_wall_time: bool) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for m in metrics {
        let _ = writeln!(out, "{}", m.csv_row(with_wall_time));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{normalize, synth_blobs, NormalizationSpec};
    use crate::network::{Block, NetworkConfig};

    fn blobs(per_class: usize, seed: u64) -> Dataset {
        let ds = synth_blobs(2, 16, per_class, 10.0, &mut SeededRng::new(seed)).unwrap();
        normalize(&ds, &NormalizationSpec::per_sample(0.29)).unwrap()
    }

    fn net(layers: usize) -> InterpretableMLP {
        InterpretableMLP::init_identity(NetworkConfig {
            layers,
            data_width: 16,
            classes: 2,
            ..NetworkConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn deviation_of_fresh_and_perturbed_nets() {
        let mut mlp = net(3);
        assert!(weight_deviation(&mlp).iter().all(|d| d.max_abs == 0.0 && d.frobenius == 0.0));
        mlp.set_block_entry(2, Block::W21, 3, 1, 0.01);
        let devs = weight_deviation(&mlp);
        assert_eq!(devs[1].max_abs, 0.01);
        assert_eq!(devs[0].max_abs, 0.0);
        assert_eq!(devs[2].max_abs, 0.0);
        assert_eq!(devs[1].p99_abs, 0.0);
    }

    #[test]
    fn untrained_net_predicts_class_zero() {
        let ds = blobs(20, 1);
        // z^L = 0 for every sample: all ties, so everything is class 0.
        assert_eq!(evaluate(&net(4), &ds), 0.5);
    }

    #[test]
    fn evaluate_matches_brute_force() {
        let mut mlp = net(3);
        let mut rng = SeededRng::new(4);
        for l in 1..=3 {
            for v in mlp.weight_mut(l).as_mut_slice() {
                *v += 0.2 * rng.standard_normal();
            }
        }
        let ds = blobs(40, 2);
        let brute = ds
            .samples
            .iter()
            .zip(&ds.labels)
            .filter(|(s, &y)| {
                let t = mlp.forward(&mlp.pad(s).unwrap());
                let z = t.logits();
                let mut best = 0;
                for k in 1..z.len() {
                    if z[k] > z[best] {
                        best = k;
                    }
                }
                best == y
            })
            .count() as f64
            / ds.len() as f64;
        assert_eq!(evaluate(&mlp, &ds), brute);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mlp = net(3);
        let ds = blobs(16, 3);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let out = train(mlp.clone(), &ds, &ds, &cfg, TrainOutput::default()).unwrap();
        assert_eq!(out.mlp, mlp);
        let first = &out.metrics[0];
        for m in &out.metrics {
            assert_eq!(m.train_loss, first.train_loss);
            assert_eq!(m.train_accuracy, first.train_accuracy);
            assert_eq!(m.test_accuracy, first.test_accuracy);
        }
    }

    #[test]
    fn one_step_matches_hand_rolled_momentum_update() {
        let ds = blobs(1, 5).select(&[0]);
        let mlp = net(2);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 1,
            learning_rate: 0.05,
            momentum: 0.9,
            ..TrainConfig::default()
        };
        let out = train(mlp.clone(), &ds, &ds, &cfg, TrainOutput::default()).unwrap();

        // Oracle: replay the recursion with gradients from the batched backward pass.
        let mut oracle = mlp.clone();
        let mut velocity = vec![Matrix::zeros(18, 18); 2];
        let inputs = ds.padded_batch(&[0]);
        for _ in 0..2 {
            let mut grads = vec![Matrix::zeros(18, 18); 2];
            oracle
                .clone()
                .backward_batch(&inputs, &ds.labels, |l, g, _| grads[l - 1] = g.clone())
                .unwrap();
            for l in 0..2 {
                for k in 0..18 * 18 {
                    let v = 0.9 * velocity[l].as_slice()[k] + grads[l].as_slice()[k];
                    velocity[l].as_mut_slice()[k] = v;
                    oracle.weight_mut(l + 1).as_mut_slice()[k] -= 0.05 * v;
                }
            }
        }
        assert_eq!(out.mlp, oracle);

        // The batched gradient agrees with the per-sample backward pass.
        let (_, g) = mlp.loss_and_gradients(&inputs, ds.labels[0]).unwrap();
        let mut batched = vec![Matrix::zeros(18, 18); 2];
        mlp.clone()
            .backward_batch(&inputs, &ds.labels, |l, gr, _| batched[l - 1] = gr.clone())
            .unwrap();
        for (a, b) in g.per_layer.iter().zip(&batched) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() <= 1e-15 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let ds = blobs(20, 6);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            shuffle_seed: 11,
            ..TrainConfig::default()
        };
        let a = train(net(5), &ds, &ds, &cfg, TrainOutput::default()).unwrap();
        let b = train(net(5), &ds, &ds, &cfg, TrainOutput::default()).unwrap();
        assert_eq!(metrics_csv(&a.metrics, false), metrics_csv(&b.metrics, false));
        assert_eq!(crate::checkpoint::encode(&a.mlp), crate::checkpoint::encode(&b.mlp));
    }

    #[test]
    fn separable_blobs_are_learned() {
        let ds = blobs(100, 7);
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let out = train(net(20), &ds, &ds, &cfg, TrainOutput::default()).unwrap();
        let last = out.metrics.last().unwrap();
        assert!(last.train_accuracy >= 0.99, "accuracy {}", last.train_accuracy);
        let first_half: f64 = out.metrics[..10].iter().map(|m| m.train_loss).sum::<f64>() / 10.0;
        let second_half: f64 = out.metrics[10..].iter().map(|m| m.train_loss).sum::<f64>() / 10.0;
        assert!(second_half <= first_half);
    }

    #[test]
    fn snapshots_and_metrics_file() {
        let dir = tempfile::tempdir().unwrap();
        let ds = blobs(10, 8);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            snapshot_every: 1,
            ..TrainConfig::default()
        };
        let out = train(net(3), &ds, &ds, &cfg, TrainOutput { dir: Some(dir.path()), progress: None }).unwrap();
        assert_eq!(out.checkpoints.len(), 2);
        assert!(dir.path().join("ckpt_epoch2.iimlp").exists());
        assert!(dir.path().join("layer_accuracy_epoch1.csv").exists());
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(METRICS_HEADER));
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn rejects_bad_configs_and_shapes() {
        let ds = blobs(4, 9);
        let bad = TrainConfig {
            momentum: 1.0,
            ..TrainConfig::default()
        };
        assert!(train(net(2), &ds, &ds, &bad, TrainOutput::default()).is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train(net(2), &ds, &ds, &bad, TrainOutput::default()).is_err());
        let wide = InterpretableMLP::init_identity(NetworkConfig {
            layers: 2,
            data_width: 17,
            classes: 2,
            ..NetworkConfig::default()
        })
        .unwrap();
        assert!(matches!(
            train(wide, &ds, &ds, &TrainConfig::default(), TrainOutput::default()),
            Err(Error::Shape { .. })
        ));
    }
}
