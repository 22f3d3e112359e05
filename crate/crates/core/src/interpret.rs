//! Interpretability probes: per-layer class likelihoods and accuracy, contribution maps, the
//! cumulative-W12 discriminability table, and PGM/PPM export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{argmax, cosine, pearson, Matrix, Vector};
use crate::network::{InterpretableMLP, LayerTrace};

/// Rows per batched forward pass in the dataset-wide probes.
const PROBE_BATCH: usize = 250;

/// `x^l - x^0` for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionMap {
    pub layer: usize,
    pub source_sample: usize,
    pub values: Vector,
}

/// Panics unless `1 <= layer <= L`.
pub fn contribution_map(trace: &LayerTrace, layer: usize, source_sample: usize) -> ContributionMap {
    assert!(
        layer >= 1 && layer <= trace.layers(),
        "contribution map layer {layer} outside 1..={}",
        trace.layers()
    );
    let values = trace.x(layer).iter().zip(trace.x(0)).map(|(a, b)| a - b).collect();
    ContributionMap {
        layer,
        source_sample,
        values,
    }
}

/// `z^l` for `l = 0..=L`.
pub fn likelihood_series(trace: &LayerTrace) -> Vec<Vec<f64>> {
    (0..=trace.layers()).map(|l| trace.z(l).to_vec()).collect()
}

pub fn likelihood_csv(series: &[Vec<f64>]) -> String {
    let mut out = String::from("layer,class,value\n");
    for (layer, z) in series.iter().enumerate() {
        for (class, v) in z.iter().enumerate() {
            let _ = writeln!(out, "{layer},{class},{v}");
        }
    }
    out
}

/// Accuracy of `argmax z^l` at every layer `l = 0..=L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAccuracyCurve {
    pub accuracy: Vec<f64>,
}

impl LayerAccuracyCurve {
    pub fn layers(&self) -> usize {
        self.accuracy.len() - 1
    }

    /// Share of the total rise `acc(L) - acc(0)` gained after layer `from`; `None` when there
    /// is no rise.
    pub fn rise_share_after(&self, from: usize) -> Option<f64> {
        let total = self.accuracy[self.layers()] - self.accuracy[0];
        (total > 0.0).then(|| (self.accuracy[self.layers()] - self.accuracy[from]) / total)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,accuracy\n");
        for (l, a) in self.accuracy.iter().enumerate() {
            let _ = writeln!(out, "{l},{a}");
        }
        out
    }
}

/// Layer 0 reads the zero padding, so every sample is predicted as class 0 there.
pub fn layerwise_accuracy(mlp: &InterpretableMLP, dataset: &Dataset) -> LayerAccuracyCurve {
    let layers = mlp.layers();
    let c = mlp.classes();
    let m = mlp.width();
    let mut correct = vec![0usize; layers + 1];
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(PROBE_BATCH) {
        correct[0] += chunk.iter().filter(|&&i| dataset.labels[i] == 0).count();
        mlp.forward_batch_each(&dataset.padded_batch(chunk), |layer, _, y| {
            for (row, &i) in y.chunks_exact(m).zip(chunk) {
                if argmax(&row[..c]) == dataset.labels[i] {
                    correct[layer] += 1;
                }
            }
        });
    }
    let n = dataset.len().max(1) as f64;
    LayerAccuracyCurve {
        accuracy: correct.into_iter().map(|k| k as f64 / n).collect(),
    }
}

/// `sum_{k=1}^{layer} W12^k`, a `C x N` matrix.
pub fn cumulative_w12(mlp: &InterpretableMLP, layer: usize) -> Matrix {
    assert!(layer >= 1 && layer <= mlp.layers(), "layer {layer} outside 1..={}", mlp.layers());
    let mut acc = Matrix::zeros(mlp.classes(), mlp.data_width());
    for k in 1..=layer {
        add_w12(&mut acc, mlp, k);
    }
    acc
}

fn add_w12(acc: &mut Matrix, mlp: &InterpretableMLP, layer: usize) {
    let w12 = mlp.submatrices(layer).w12;
    for i in 0..acc.rows() {
        for (a, &w) in acc.row_mut(i).iter_mut().zip(w12.row(i)) {
            *a += w;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    #[default]
    Pearson,
    Cosine,
}

impl Correlation {
    fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Correlation::Pearson => pearson(a, b),
            Correlation::Cosine => cosine(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminabilityOptions {
    pub correlation: Correlation,
    /// Evaluate on a seeded random subset of at most this many samples.
    pub max_samples: Option<usize>,
    pub subset_seed: u64,
}

impl Default for DiscriminabilityOptions {
    fn default() -> Self {
        DiscriminabilityOptions {
            correlation: Correlation::Pearson,
            max_samples: Some(1000),
            subset_seed: 0,
        }
    }
}

/// `r(l, c, c')`: mean over samples of true class `c` of the correlation between `x^l - x^0`
/// and row `c'` of `sum_{k<=l} W12^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminabilityTable {
    pub layers: usize,
    pub classes: usize,
    /// Evaluation samples per true class.
    pub class_counts: Vec<usize>,
    values: Vec<f64>,
}

impl DiscriminabilityTable {
    /// `layer` in `1..=L`. Classes without samples read 0.
    pub fn get(&self, layer: usize, class: usize, probe: usize) -> f64 {
        let c = self.classes;
        self.values[(layer - 1) * c * c + class * c + probe]
    }

    fn present(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.classes).filter(|&c| self.class_counts[c] > 0)
    }

    /// Mean of `r(l, c, c)` over classes present in the evaluation set.
    pub fn diagonal_mean(&self, layer: usize) -> f64 {
        let (sum, n) = self
            .present()
            .fold((0.0, 0usize), |(s, n), c| (s + self.get(layer, c, c), n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Mean of `r(l, c, c')` over `c' != c`, `c` ranging over classes present.
    pub fn off_diagonal_mean(&self, layer: usize) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for c in self.present() {
            for p in (0..self.classes).filter(|&p| p != c) {
                sum += self.get(layer, c, p);
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,true_class,probe_class,r\n");
        for l in 1..=self.layers {
            for c in 0..self.classes {
                for p in 0..self.classes {
                    let _ = writeln!(out, "{l},{c},{p},{}", self.get(l, c, p));
                }
            }
        }
        out
    }
}

pub fn discriminability(mlp: &InterpretableMLP, dataset: &Dataset, opts: &DiscriminabilityOptions) -> DiscriminabilityTable {
    let eval = match opts.max_samples {
        Some(n) if n < dataset.len() => dataset.shuffled_take(n, opts.subset_seed),
        _ => dataset.clone(),
    };
    let layers = mlp.layers();
    let c = mlp.classes();
    let m = mlp.width();
    let mut sums = vec![0.0; layers * c * c];
    let mut class_counts = vec![0usize; c];
    for &l in &eval.labels {
        class_counts[l] += 1;
    }
    let indices: Vec<usize> = (0..eval.len()).collect();
    for chunk in indices.chunks(PROBE_BATCH) {
        let inputs = eval.padded_batch(chunk);
        // Running sum of W12 blocks, advanced as the batched pass moves up the layers.
        let mut acc = Matrix::zeros(c, mlp.data_width());
        let mut diff = vec![0.0; mlp.data_width()];
        mlp.forward_batch_each(&inputs, |layer, _, y| {
            add_w12(&mut acc, mlp, layer);
            let base = (layer - 1) * c * c;
            for ((row, input), &i) in y.chunks_exact(m).zip(inputs.chunks_exact(m)).zip(chunk) {
                for (d, (a, b)) in diff.iter_mut().zip(row[c..].iter().zip(&input[c..])) {
                    *d = a - b;
                }
                let class = eval.labels[i];
                for probe in 0..c {
                    sums[base + class * c + probe] += opts.correlation.eval(&diff, acc.row(probe));
                }
            }
        });
    }
    for l in 0..layers {
        for class in 0..c {
            let n = class_counts[class];
            for probe in 0..c {
                let v = &mut sums[l * c * c + class * c + probe];
                *v = if n == 0 { 0.0 } else { (*v / n as f64).clamp(-1.0, 1.0) };
            }
        }
    }
    DiscriminabilityTable {
        layers,
        classes: c,
        class_counts,
        values: sums,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapLayout {
    /// `sqrt(N) x sqrt(N)` grayscale, written as binary PGM.
    GraySqrt,
    /// Three `k x k` planes (R, G, B) with `N = 3k^2`, written as binary PPM.
    RgbPlanes,
}

impl MapLayout {
    pub fn extension(self) -> &'static str {
        match self {
            MapLayout::GraySqrt => "pgm",
            MapLayout::RgbPlanes => "ppm",
        }
    }

    /// Layout matching a data width, preferring grayscale.
    pub fn for_width(n: usize) -> Option<MapLayout> {
        if exact_sqrt(n).is_some() {
            Some(MapLayout::GraySqrt)
        } else if n.is_multiple_of(3) && exact_sqrt(n / 3).is_some() {
            Some(MapLayout::RgbPlanes)
        } else {
            None
        }
    }
}

fn exact_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n && n > 0).then_some(r)
}

/// Per-map min-max scaling to `0..=255`; a constant map becomes mid-gray.
fn scale_to_bytes(values: &[f64]) -> Vec<u8> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|&v| ((v - min) / (max - min) * 255.0).round() as u8)
        .collect()
}

/// Netpbm bytes for a map.
pub fn encode_map_image(values: &[f64], layout: MapLayout) -> Result<Vec<u8>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("contribution map has non-finite entries".into()));
    }
    let n = values.len();
    let pixels = scale_to_bytes(values);
    match layout {
        MapLayout::GraySqrt => {
            let side = exact_sqrt(n).ok_or_else(|| {
                Error::InvalidConfig(format!("gray_sqrt layout needs a square length, got {n}"))
            })?;
            let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
            out.extend_from_slice(&pixels);
            Ok(out)
        }
        MapLayout::RgbPlanes => {
            let side = n.is_multiple_of(3)
                .then(|| exact_sqrt(n / 3))
                .flatten()
                .ok_or_else(|| Error::InvalidConfig(format!("rgb_planes layout needs length 3k^2, got {n}")))?;
            let plane = side * side;
            let mut out = format!("P6\n{side} {side}\n255\n").into_bytes();
            for p in 0..plane {
                out.extend_from_slice(&[pixels[p], pixels[plane + p], pixels[2 * plane + p]]);
            }
            Ok(out)
        }
    }
}

pub fn export_map_image(map: &ContributionMap, layout: MapLayout, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_map_image(&map.values, layout)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{normalize, synth_blobs, NormalizationSpec};
    use crate::network::{Block, NetworkConfig};
    use crate::rng::SeededRng;
    use crate::trainer::evaluate;

    fn cfg(layers: usize, classes: usize, n: usize, sigma: f64) -> NetworkConfig {
        NetworkConfig {
            layers,
            classes,
            data_width: n,
            sigma,
            ..NetworkConfig::default()
        }
    }

    fn perturbed(layers: usize, classes: usize, n: usize, seed: u64) -> InterpretableMLP {
        let mut mlp = InterpretableMLP::init_identity(cfg(layers, classes, n, 1.0)).unwrap();
        let mut rng = SeededRng::new(seed);
        for l in 1..=layers {
            for v in mlp.weight_mut(l).as_mut_slice() {
                *v += 0.1 * rng.standard_normal();
            }
        }
        mlp
    }

    /// Minimal netpbm reader: magic, width, height, maxval, then raw bytes.
    fn decode_netpbm(bytes: &[u8]) -> (String, usize, usize, Vec<u8>) {
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            fields.push(String::from_utf8(bytes[start..pos].to_vec()).unwrap());
        }
        pos += 1;
        assert_eq!(fields[3], "255");
        (
            fields[0].clone(),
            fields[1].parse().unwrap(),
            fields[2].parse().unwrap(),
            bytes[pos..].to_vec(),
        )
    }

    #[test]
    fn identity_net_has_zero_maps_and_likelihoods() {
        let mlp = InterpretableMLP::init_identity(cfg(5, 3, 4, 1.0)).unwrap();
        let trace = mlp.forward(&mlp.pad(&[0.3, -0.9, 0.0, 1.0]).unwrap());
        for l in 1..=5 {
            assert!(contribution_map(&trace, l, 0).values.iter().all(|&v| v == 0.0));
        }
        let series = likelihood_series(&trace);
        assert_eq!(series.len(), 6);
        assert!(series.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_coordinate_shows_clamp_difference() {
        let mlp = InterpretableMLP::init_identity(cfg(2, 2, 3, 1.0)).unwrap();
        let trace = mlp.forward(&mlp.pad(&[0.5, 3.0, -0.2]).unwrap());
        let map = contribution_map(&trace, 1, 7);
        assert_eq!(map.values.as_slice(), &[0.0, -2.0, 0.0]);
        assert_eq!(map.source_sample, 7);
    }

    #[test]
    fn map_matches_fresh_recomputation() {
        let mlp = perturbed(4, 2, 5, 3);
        let x0 = [0.2, -0.4, 0.1, 0.7, -0.3];
        let trace = mlp.forward(&mlp.pad(&x0).unwrap());
        let mut y = mlp.pad(&x0).unwrap().into_inner();
        for l in 1..=4 {
            let w = mlp.weight(l);
            y = (0..w.rows())
                .map(|i| {
                    let h: f64 = w.row(i).iter().zip(&y).map(|(a, b)| a * b).sum();
                    h.clamp(-1.0, 1.0)
                })
                .collect();
            let expect: Vec<f64> = y[2..].iter().zip(&x0).map(|(a, b)| a - b).collect();
            for (a, b) in contribution_map(&trace, l, 0).values.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    #[should_panic(expected = "outside")]
    fn layer_zero_map_is_rejected() {
        let mlp = InterpretableMLP::init_identity(cfg(2, 2, 2, 1.0)).unwrap();
        let trace = mlp.forward(&mlp.pad(&[0.1, 0.2]).unwrap());
        contribution_map(&trace, 0, 0);
    }

    #[test]
    fn layer_accuracy_endpoints() {
        let ds = synth_blobs(3, 6, 20, 3.0, &mut SeededRng::new(1)).unwrap();
        let ds = normalize(&ds, &NormalizationSpec::per_sample(0.29)).unwrap();
        let mlp = perturbed(6, 3, 6, 2);
        let curve = layerwise_accuracy(&mlp, &ds);
        assert_eq!(curve.accuracy.len(), 7);
        assert_eq!(curve.accuracy[0], 1.0 / 3.0);
        assert_eq!(curve.accuracy[6], evaluate(&mlp, &ds));
        let mut linear = mlp.clone();
        linear.set_last_layer_linear_head(true);
        assert_eq!(layerwise_accuracy(&linear, &ds).accuracy[6], evaluate(&linear, &ds));
        let csv = curve.to_csv();
        assert!(csv.starts_with("layer,accuracy\n0,"));
        assert_eq!(csv.lines().count(), 8);
    }

    #[test]
    fn rise_share() {
        let curve = LayerAccuracyCurve {
            accuracy: vec![0.1, 0.1, 0.2, 0.5, 0.9],
        };
        assert!((curve.rise_share_after(2).unwrap() - 0.875).abs() < 1e-12);
        let flat = LayerAccuracyCurve { accuracy: vec![0.3; 4] };
        assert_eq!(flat.rise_share_after(1), None);
    }

    #[test]
    fn cumulative_w12_sums_blocks() {
        let fresh = InterpretableMLP::init_identity(cfg(3, 2, 3, 1.0)).unwrap();
        for l in 1..=3 {
            assert!(cumulative_w12(&fresh, l).as_slice().iter().all(|&v| v == 0.0));
        }
        let mut ones = fresh.clone();
        for i in 0..2 {
            for j in 0..3 {
                ones.set_block_entry(1, Block::W12, i, j, 1.0);
            }
        }
        for l in 1..=3 {
            assert!(cumulative_w12(&ones, l).as_slice().iter().all(|&v| v == 1.0));
        }
        let mlp = perturbed(4, 2, 3, 5);
        for l in 1..=4 {
            let mut expect = [[0.0; 3]; 2];
            for k in 1..=l {
                let w = mlp.weight(k);
                for (i, row) in expect.iter_mut().enumerate() {
                    for (j, e) in row.iter_mut().enumerate() {
                        *e += w[(i, 2 + j)];
                    }
                }
            }
            let got = cumulative_w12(&mlp, l);
            for i in 0..2 {
                for j in 0..3 {
                    assert!((got[(i, j)] - expect[i][j]).abs() < 1e-15);
                }
            }
            if l > 1 {
                let prev = cumulative_w12(&mlp, l - 1);
                let block = mlp.submatrices(l).w12.to_matrix();
                for k in 0..6 {
                    assert_eq!(got.as_slice()[k], prev.as_slice()[k] + block.as_slice()[k]);
                }
            }
        }
    }

    #[test]
    fn untrained_table_is_zero() {
        let ds = synth_blobs(2, 4, 10, 2.0, &mut SeededRng::new(3)).unwrap();
        let ds = normalize(&ds, &NormalizationSpec::per_sample(0.29)).unwrap();
        let mlp = InterpretableMLP::init_identity(cfg(3, 2, 4, 1.0 + 8e-4)).unwrap();
        let table = discriminability(&mlp, &ds, &DiscriminabilityOptions::default());
        assert!(table.is_all_zero());
        assert_eq!(table.class_counts, vec![10, 10]);
    }

    #[test]
    fn constructed_fixture_has_unit_diagonal() {
        // One linear-region layer with W12 rows as patterns and W22 = I + P, so that
        // x^1 - x^0 = P x^0 equals the class-0 pattern for the single class-0 input.
        let n = 4;
        let mut mlp = InterpretableMLP::init_identity(cfg(1, 2, n, 1.0)).unwrap();
        let pattern = [[0.1, -0.2, 0.05, 0.3], [0.2, 0.1, -0.3, 0.0]];
        for (c, row) in pattern.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                mlp.set_block_entry(1, Block::W12, c, j, v);
            }
        }
        for (i, &w) in pattern[0].iter().enumerate() {
            let base = if i == 0 { 1.0 } else { 0.0 };
            mlp.set_block_entry(1, Block::W22, i, 0, base + w / 0.5);
        }
        let ds = Dataset::new("toy", vec![Vector::from(vec![0.5, 0.0, 0.0, 0.0])], vec![0], 2).unwrap();
        let trace = mlp.forward(&mlp.pad(&ds.samples[0]).unwrap());
        let map = contribution_map(&trace, 1, 0);
        for (a, b) in map.values.iter().zip(&pattern[0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let table = discriminability(&mlp, &ds, &DiscriminabilityOptions::default());
        assert!((table.get(1, 0, 0) - 1.0).abs() < 1e-12);
        assert!(table.get(1, 0, 1) < 1.0);
        assert_eq!(table.diagonal_mean(1), table.get(1, 0, 0));
        assert_eq!(table.off_diagonal_mean(1), table.get(1, 0, 1));
    }

    #[test]
    fn table_bounds_and_reproducibility() {
        let ds = synth_blobs(3, 9, 15, 2.0, &mut SeededRng::new(4)).unwrap();
        let ds = normalize(&ds, &NormalizationSpec::per_sample(0.29)).unwrap();
        let mlp = perturbed(5, 3, 9, 6);
        let opts = DiscriminabilityOptions {
            max_samples: Some(30),
            subset_seed: 2,
            ..Default::default()
        };
        let a = discriminability(&mlp, &ds, &opts);
        let b = discriminability(&mlp, &ds, &opts);
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.class_counts.iter().sum::<usize>(), 30);
        for l in 1..=5 {
            for c in 0..3 {
                for p in 0..3 {
                    assert!((-1.0..=1.0).contains(&a.get(l, c, p)));
                }
            }
        }
        let cos = discriminability(
            &mlp,
            &ds,
            &DiscriminabilityOptions {
                correlation: Correlation::Cosine,
                ..opts
            },
        );
        assert_ne!(a, cos);
        let header = a.to_csv();
        assert!(header.starts_with("layer,true_class,probe_class,r\n"));
        assert_eq!(header.lines().count(), 1 + 5 * 9);
    }

    #[test]
    fn per_sample_table_matches_direct_correlation() {
        let ds = synth_blobs(2, 4, 3, 2.0, &mut SeededRng::new(8)).unwrap();
        let mlp = perturbed(3, 2, 4, 9);
        let table = discriminability(&mlp, &ds, &DiscriminabilityOptions::default());
        for l in 1..=3 {
            let w = cumulative_w12(&mlp, l);
            for c in 0..2 {
                for p in 0..2 {
                    let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
                    let mean = members
                        .iter()
                        .map(|&i| {
                            let trace = mlp.forward(&mlp.pad(&ds.samples[i]).unwrap());
                            pearson(&contribution_map(&trace, l, i).values, w.row(p))
                        })
                        .sum::<f64>()
                        / members.len() as f64;
                    assert!((table.get(l, c, p) - mean).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn image_scaling_and_layouts() {
        let pgm = encode_map_image(&[0.0, 1.0, 2.0, 3.0], MapLayout::GraySqrt).unwrap();
        let (magic, w, h, px) = decode_netpbm(&pgm);
        assert_eq!((magic.as_str(), w, h), ("P5", 2, 2));
        assert_eq!(px, vec![0, 85, 170, 255]);

        let constant = encode_map_image(&[0.7; 9], MapLayout::GraySqrt).unwrap();
        assert_eq!(decode_netpbm(&constant).3, vec![128; 9]);

        let planes: Vec<f64> = (0..12).map(f64::from).collect();
        let ppm = encode_map_image(&planes, MapLayout::RgbPlanes).unwrap();
        let (magic, w, h, px) = decode_netpbm(&ppm);
        assert_eq!((magic.as_str(), w, h), ("P6", 2, 2));
        let s = |v: f64| (v / 11.0 * 255.0).round() as u8;
        let expect: Vec<u8> = (0..4)
            .flat_map(|p| [s(p as f64), s(4.0 + p as f64), s(8.0 + p as f64)])
            .collect();
        assert_eq!(px, expect);

        assert!(encode_map_image(&[0.0; 5], MapLayout::GraySqrt).is_err());
        assert!(encode_map_image(&[0.0; 9], MapLayout::RgbPlanes).is_err());
        assert_eq!(MapLayout::for_width(784), Some(MapLayout::GraySqrt));
        assert_eq!(MapLayout::for_width(3072), Some(MapLayout::RgbPlanes));
        assert_eq!(MapLayout::for_width(10), None);
    }

    #[test]
    fn export_writes_file() {
        let dir = tempfile::tempdir().unwrap();
        let map = ContributionMap {
            layer: 1,
            source_sample: 0,
            values: Vector::from(vec![0.0, 1.0, 2.0, 3.0]),
        };
        let path = dir.path().join("map_s0_l1.pgm");
        export_map_image(&map, MapLayout::GraySqrt, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), encode_map_image(&map.values, MapLayout::GraySqrt).unwrap());
    }

    #[test]
    fn likelihood_csv_layout() {
        let csv = likelihood_csv(&[vec![0.0, 0.0], vec![0.5, -0.5]]);
        assert_eq!(csv, "layer,class,value\n0,0,0\n0,1,0\n1,0,0.5\n1,1,-0.5\n");
    }
}
