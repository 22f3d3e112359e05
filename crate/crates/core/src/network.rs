//! The interpretable MLP: `L` square layers of width `C + N` with no biases.
//!
//! The hidden state of every layer is read as `(z, x)`: the first `C` coordinates carry the
//! per-layer class likelihood, the remaining `N` the data part. Inputs are the data vector
//! padded with `C` leading zeros.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    self, dot_from, hard_tanh_deriv_scalar, hard_tanh_scalar, log_sum_exp, matvec, relu_deriv_scalar,
    relu_scalar, softmax, Matrix, Vector,
};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    HardTanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::HardTanh => hard_tanh_scalar(x),
            Activation::Relu => relu_scalar(x),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::HardTanh => hard_tanh_deriv_scalar(x),
            Activation::Relu => relu_deriv_scalar(x),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::HardTanh => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::HardTanh),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Every layer starts at `sigma * I`.
    Identity,
    /// i.i.d. N(0, 2 / width) entries.
    HeRandom,
}

impl InitKind {
    pub fn code(self) -> u8 {
        match self {
            InitKind::Identity => 0,
            InitKind::HeRandom => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(InitKind::Identity),
            1 => Some(InitKind::HeRandom),
            _ => None,
        }
    }
}

/// Network hyperparameters. Defaults are the 100-layer Fashion-MNIST setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub layers: usize,
    /// Data width `N`.
    pub data_width: usize,
    /// Class count `C`.
    pub classes: usize,
    pub sigma: f64,
    pub q_star: f64,
    pub activation: Activation,
    pub init: InitKind,
    pub seed: u64,
    /// Skip the activation on the `z` coordinates of the last layer, feeding raw logits to the
    /// softmax. Off by default: the last layer clamps like every other layer.
    pub last_layer_linear_head: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            layers: 100,
            data_width: 784,
            classes: 10,
            sigma: 1.0 + 8e-4,
            q_star: 0.29,
            activation: Activation::HardTanh,
            init: InitKind::Identity,
            seed: 0,
            last_layer_linear_head: false,
        }
    }
}

impl NetworkConfig {
    pub fn width(&self) -> usize {
        self.classes + self.data_width
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.layers == 0 {
            return bad("layers must be >= 1".into());
        }
        if self.data_width == 0 {
            return bad("data_width must be >= 1".into());
        }
        if self.classes == 0 {
            return bad("classes must be >= 1".into());
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.q_star.is_finite() && self.q_star > 0.0) {
            return bad(format!("q_star must be positive, got {}", self.q_star));
        }
        Ok(())
    }
}

/// The four blocks of a layer's weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// `C x C`: class slot to class slot.
    W11,
    /// `C x N`: data to class slot.
    W12,
    /// `N x C`: class slot to data.
    W21,
    /// `N x N`: data to data.
    W22,
}

/// Read-only window onto one block of a weight matrix.
#[derive(Debug, Clone, Copy)]
pub struct BlockRef<'a> {
    matrix: &'a Matrix,
    row0: usize,
    col0: usize,
    rows: usize,
    cols: usize,
}

impl<'a> BlockRef<'a> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.rows && j < self.cols, "block index out of range");
        self.matrix[(self.row0 + i, self.col0 + j)]
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        assert!(i < self.rows, "block row out of range");
        &self.matrix.row(self.row0 + i)[self.col0..self.col0 + self.cols]
    }

    pub fn to_matrix(&self) -> Matrix {
        self.matrix.block(self.row0, self.col0, self.rows, self.cols)
    }

    /// `acc_i + sum_j B_ij v_j`, summing left to right.
    fn matvec_from(&self, acc: &[f64], v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot_from(acc[i], self.row(i), v)).collect()
    }
}

/// The four blocks of one layer, tiling its weight matrix without overlap.
#[derive(Debug, Clone, Copy)]
pub struct SubmatrixView<'a> {
    pub w11: BlockRef<'a>,
    pub w12: BlockRef<'a>,
    pub w21: BlockRef<'a>,
    pub w22: BlockRef<'a>,
}

impl<'a> SubmatrixView<'a> {
    fn new(matrix: &'a Matrix, classes: usize) -> Self {
        let n = matrix.rows() - classes;
        let block = |row0, col0, rows, cols| BlockRef {
            matrix,
            row0,
            col0,
            rows,
            cols,
        };
        SubmatrixView {
            w11: block(0, 0, classes, classes),
            w12: block(0, classes, classes, n),
            w21: block(classes, 0, n, classes),
            w22: block(classes, classes, n, n),
        }
    }

    pub fn get(&self, which: Block) -> BlockRef<'a> {
        match which {
            Block::W11 => self.w11,
            Block::W12 => self.w12,
            Block::W21 => self.w21,
            Block::W22 => self.w22,
        }
    }
}

/// Pre-activations and outputs of every layer for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    classes: usize,
    input: Vector,
    pre: Vec<Vector>,
    post: Vec<Vector>,
}

impl LayerTrace {
    pub fn layers(&self) -> usize {
        self.pre.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input(&self) -> &Vector {
        &self.input
    }

    /// `h^l` for `1 <= l <= L`.
    pub fn h(&self, layer: usize) -> &Vector {
        assert!(layer >= 1 && layer <= self.layers(), "h is defined for layers 1..=L");
        &self.pre[layer - 1]
    }

    /// `y^l` for `0 <= l <= L`; `y^0` is the padded input.
    pub fn y(&self, layer: usize) -> &Vector {
        if layer == 0 {
            &self.input
        } else {
            &self.post[layer - 1]
        }
    }

    /// Class-likelihood slot of layer `l`.
    pub fn z(&self, layer: usize) -> &[f64] {
        &self.y(layer)[..self.classes]
    }

    /// Data part of layer `l`.
    pub fn x(&self, layer: usize) -> &[f64] {
        &self.y(layer)[self.classes..]
    }

    /// Logits read by the loss.
    pub fn logits(&self) -> &[f64] {
        self.z(self.layers())
    }
}

/// Per-layer loss gradients, shaped like the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub per_layer: Vec<Matrix>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.per_layer.iter().all(Matrix::is_finite)
    }
}

/// `u = (0, ..., 0 | x0)` with `classes` leading zeros.
pub fn pad_input(x0: &[f64], classes: usize) -> Vector {
    let mut u = Vec::with_capacity(classes + x0.len());
    u.resize(classes, 0.0);
    u.extend_from_slice(x0);
    Vector::from(u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpretableMLP {
    config: NetworkConfig,
    weights: Vec<Matrix>,
}

impl InterpretableMLP {
    /// Builds the network described by `config.init`, seeding random init from `config.seed`.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        match config.init {
            InitKind::Identity => Self::init_identity(config),
            InitKind::HeRandom => {
                let mut rng = SeededRng::new(config.seed);
                Self::init_he_random(config, &mut rng)
            }
        }
    }

    /// Every layer set to `sigma * I` exactly.
    pub fn init_identity(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let w = Matrix::scaled_identity(config.width(), config.sigma);
        let weights = vec![w; config.layers];
        Ok(InterpretableMLP { config, weights })
    }

    /// i.i.d. Gaussian entries with variance `2 / (C + N)`.
    pub fn init_he_random(config: NetworkConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let m = config.width();
        let sd = (2.0 / m as f64).sqrt();
        let weights = (0..config.layers)
            .map(|_| {
                let data = (0..m * m).map(|_| sd * rng.standard_normal()).collect();
                Matrix::from_vec(m, m, data)
            })
            .collect();
        Ok(InterpretableMLP { config, weights })
    }

    pub fn from_weights(config: NetworkConfig, weights: Vec<Matrix>) -> Result<Self> {
        config.validate()?;
        if weights.len() != config.layers {
            return Err(Error::shape("layer count", config.layers, weights.len()));
        }
        let m = config.width();
        for (l, w) in weights.iter().enumerate() {
            if w.rows() != m || w.cols() != m {
                return Err(Error::shape(
                    format!("weight matrix of layer {}", l + 1),
                    format!("{m}x{m}"),
                    format!("{}x{}", w.rows(), w.cols()),
                ));
            }
            if !w.is_finite() {
                return Err(Error::NonFinite { layer: l + 1 });
            }
        }
        Ok(InterpretableMLP { config, weights })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn set_last_layer_linear_head(&mut self, on: bool) {
        self.config.last_layer_linear_head = on;
    }

    pub fn layers(&self) -> usize {
        self.config.layers
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    pub fn data_width(&self) -> usize {
        self.config.data_width
    }

    pub fn width(&self) -> usize {
        self.config.width()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    /// Weight matrix of layer `l` (1-based).
    pub fn weight(&self, layer: usize) -> &Matrix {
        &self.weights[layer - 1]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Matrix {
        &mut self.weights[layer - 1]
    }

    pub fn submatrices(&self, layer: usize) -> SubmatrixView<'_> {
        SubmatrixView::new(self.weight(layer), self.config.classes)
    }

    /// Writes entry `(i, j)` of one block of layer `l`.
    pub fn set_block_entry(&mut self, layer: usize, block: Block, i: usize, j: usize, value: f64) {
        let c = self.config.classes;
        let n = self.config.data_width;
        let (r0, c0, rows, cols) = match block {
            Block::W11 => (0, 0, c, c),
            Block::W12 => (0, c, c, n),
            Block::W21 => (c, 0, n, c),
            Block::W22 => (c, c, n, n),
        };
        assert!(i < rows && j < cols, "block index out of range");
        self.weights[layer - 1][(r0 + i, c0 + j)] = value;
    }

    /// Pads a data vector, checking its length against the configured `N`.
    pub fn pad(&self, x0: &[f64]) -> Result<Vector> {
        if x0.len() != self.config.data_width {
            return Err(Error::shape("input data vector", self.config.data_width, x0.len()));
        }
        Ok(pad_input(x0, self.config.classes))
    }

    #[inline]
    fn activate(&self, layer: usize, coord: usize, h: f64) -> f64 {
        if self.is_linear_slot(layer, coord) {
            h
        } else {
            self.config.activation.apply(h)
        }
    }

    #[inline]
    fn activation_derivative(&self, layer: usize, coord: usize, h: f64) -> f64 {
        if self.is_linear_slot(layer, coord) {
            1.0
        } else {
            self.config.activation.derivative(h)
        }
    }

    #[inline]
    fn is_linear_slot(&self, layer: usize, coord: usize) -> bool {
        self.config.last_layer_linear_head && layer == self.config.layers && coord < self.config.classes
    }

    fn check_input(&self, u: &[f64]) {
        assert_eq!(
            u.len(),
            self.width(),
            "input length {} does not match network width {}",
            u.len(),
            self.width()
        );
    }

    /// `h^l = W^l y^(l-1)`, `y^l = phi(h^l)`, `y^0 = u`.
    pub fn forward(&self, u: &[f64]) -> LayerTrace {
        self.check_input(u);
        let mut pre = Vec::with_capacity(self.layers());
        let mut post: Vec<Vector> = Vec::with_capacity(self.layers());
        for (idx, w) in self.weights.iter().enumerate() {
            let layer = idx + 1;
            let prev = post.last().map_or(u, |y| y.as_slice());
            let h = matvec(w, prev);
            let y: Vector = h
                .iter()
                .enumerate()
                .map(|(i, &hi)| self.activate(layer, i, hi))
                .collect();
            pre.push(h);
            post.push(y);
        }
        LayerTrace {
            classes: self.classes(),
            input: Vector::from(u),
            pre,
            post,
        }
    }

    /// Same pass written in block form: `z' = phi(W11 z + W12 x)`, `x' = phi(W21 z + W22 x)`.
    ///
    /// The `W12 x` product continues the accumulator of `W11 z` (and likewise for the lower
    /// blocks), so the result is bit-identical to [`forward`](Self::forward).
    pub fn forward_submatrix(&self, u: &[f64]) -> LayerTrace {
        self.check_input(u);
        let c = self.classes();
        let mut pre = Vec::with_capacity(self.layers());
        let mut post: Vec<Vector> = Vec::with_capacity(self.layers());
        for layer in 1..=self.layers() {
            let prev = post.last().map_or(u, |y| y.as_slice());
            let (z, x) = prev.split_at(c);
            let blocks = self.submatrices(layer);
            let top = blocks.w12.matvec_from(&blocks.w11.matvec_from(&vec![0.0; c], z), x);
            let bottom = blocks
                .w22
                .matvec_from(&blocks.w21.matvec_from(&vec![0.0; self.data_width()], z), x);
            let h: Vector = top.into_iter().chain(bottom).collect();
            let y: Vector = h
                .iter()
                .enumerate()
                .map(|(i, &hi)| self.activate(layer, i, hi))
                .collect();
            pre.push(h);
            post.push(y);
        }
        LayerTrace {
            classes: c,
            input: Vector::from(u),
            pre,
            post,
        }
    }

    fn first_non_finite_layer(trace: &LayerTrace) -> Option<usize> {
        (1..=trace.layers()).find(|&l| !trace.h(l).is_finite() || !trace.y(l).is_finite())
    }

    /// Cross-entropy of `softmax(z^L)` against `label`, and its gradient with respect to every
    /// weight matrix. The data coordinates of the last layer receive no upstream gradient.
    pub fn loss_and_gradients(&self, u: &[f64], label: usize) -> Result<(f64, Gradients)> {
        assert!(label < self.classes(), "label {label} out of range for {} classes", self.classes());
        let trace = self.forward(u);
        let logits = trace.logits();
        let loss = log_sum_exp(logits) - logits[label];
        if !loss.is_finite() {
            let layer = Self::first_non_finite_layer(&trace).unwrap_or(self.layers());
            return Err(Error::NonFinite { layer });
        }
        let mut upstream = Vector::zeros(self.width());
        let p = softmax(logits);
        for (k, pk) in p.iter().enumerate() {
            upstream[k] = pk - if k == label { 1.0 } else { 0.0 };
        }
        let m = self.width();
        let mut grads = vec![Matrix::zeros(m, m); self.layers()];
        for layer in (1..=self.layers()).rev() {
            let h = trace.h(layer);
            let delta: Vector = upstream
                .iter()
                .zip(h.iter())
                .enumerate()
                .map(|(i, (&g, &hi))| g * self.activation_derivative(layer, i, hi))
                .collect();
            let y_prev = trace.y(layer - 1);
            let gw = &mut grads[layer - 1];
            for (i, &di) in delta.iter().enumerate() {
                if di == 0.0 {
                    continue;
                }
                for (g, &yj) in gw.row_mut(i).iter_mut().zip(y_prev.iter()) {
                    *g = di * yj;
                }
            }
            upstream = linalg::matvec_transposed(self.weight(layer), &delta);
        }
        let grads = Gradients { per_layer: grads };
        if !grads.is_finite() {
            let layer = grads.per_layer.iter().position(|g| !g.is_finite()).map_or(0, |i| i + 1);
            return Err(Error::NonFinite { layer });
        }
        Ok((loss, grads))
    }

    /// Cross-entropy only.
    pub fn loss(&self, u: &[f64], label: usize) -> f64 {
        let trace = self.forward(u);
        let logits = trace.logits();
        log_sum_exp(logits) - logits[label]
    }

    /// `J v` with `J = dy^L/du`, by forward tangent propagation `t^l = D^l W^l t^(l-1)`.
    pub fn jacobian_vector_product(&self, u: &[f64], v: &[f64]) -> Vector {
        let trace = self.forward(u);
        self.jvp_with_trace(&trace, v)
    }

    /// `J^T w`, by reverse accumulation.
    pub fn vector_jacobian_product(&self, u: &[f64], w: &[f64]) -> Vector {
        let trace = self.forward(u);
        self.vjp_with_trace(&trace, w)
    }

    fn jvp_with_trace(&self, trace: &LayerTrace, v: &[f64]) -> Vector {
        assert_eq!(v.len(), self.width(), "tangent length must equal network width");
        let mut t = Vector::from(v);
        for layer in 1..=self.layers() {
            let h = trace.h(layer);
            let wt = matvec(self.weight(layer), &t);
            t = wt
                .iter()
                .zip(h.iter())
                .enumerate()
                .map(|(i, (&a, &hi))| a * self.activation_derivative(layer, i, hi))
                .collect();
        }
        t
    }

    fn vjp_with_trace(&self, trace: &LayerTrace, w: &[f64]) -> Vector {
        assert_eq!(w.len(), self.width(), "cotangent length must equal network width");
        let mut g = Vector::from(w);
        for layer in (1..=self.layers()).rev() {
            let h = trace.h(layer);
            let dg: Vector = g
                .iter()
                .zip(h.iter())
                .enumerate()
                .map(|(i, (&a, &hi))| a * self.activation_derivative(layer, i, hi))
                .collect();
            g = linalg::matvec_transposed(self.weight(layer), &dg);
        }
        g
    }

    /// Largest singular value of the input-output Jacobian at `u`, by power iteration on `J^T J`.
    pub fn top_singular_value(&self, u: &[f64], rng: &mut SeededRng, iterations: usize) -> f64 {
        self.top_singular_value_history(u, rng, iterations)
            .last()
            .map_or(0.0, |r| r.sqrt())
    }

    /// Rayleigh quotients `v_k^T J^T J v_k` of the power-iteration iterates.
    pub fn top_singular_value_history(
        &self,
        u: &[f64],
        rng: &mut SeededRng,
        iterations: usize,
    ) -> Vec<f64> {
        assert!(iterations >= 1, "power iteration needs at least one step");
        let trace = self.forward(u);
        let mut v: Vector = (0..self.width()).map(|_| rng.standard_normal()).collect();
        let n = v.norm();
        v.iter_mut().for_each(|x| *x /= n);
        let mut history = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let jv = self.jvp_with_trace(&trace, &v);
            let rayleigh = jv.dot(&jv);
            let next = self.vjp_with_trace(&trace, &jv);
            let norm = next.norm();
            if rayleigh == 0.0 || norm == 0.0 {
                history.push(0.0);
                break;
            }
            history.push(rayleigh);
            v = next.map(|x| x / norm);
        }
        history
    }

    /// Batched forward pass over row-major `inputs` (`batch x width`). `visit(layer, h, y)` is
    /// called for every layer with the `batch x width` pre-activations and outputs.
    pub fn forward_batch_each(&self, inputs: &[f64], mut visit: impl FnMut(usize, &[f64], &[f64])) {
        let m = self.width();
        assert_eq!(inputs.len() % m, 0, "batch input length must be a multiple of the width");
        let batch = inputs.len() / m;
        let mut y = inputs.to_vec();
        let mut h = vec![0.0; batch * m];
        for layer in 1..=self.layers() {
            linalg::gemm(batch, m, m, &y, false, self.weight(layer).as_slice(), true, &mut h, false);
            for (row_h, row_y) in h.chunks_exact(m).zip(y.chunks_exact_mut(m)) {
                for (i, (&hi, yi)) in row_h.iter().zip(row_y.iter_mut()).enumerate() {
                    *yi = self.activate(layer, i, hi);
                }
            }
            visit(layer, &h, &y);
        }
    }

    /// Final-layer logits for every row of `inputs`, flattened `batch x C`.
    pub fn logits_batch(&self, inputs: &[f64]) -> Vec<f64> {
        let m = self.width();
        let c = self.classes();
        let mut out = Vec::new();
        let last = self.layers();
        self.forward_batch_each(inputs, |layer, _, y| {
            if layer == last {
                out = y.chunks_exact(m).flat_map(|row| row[..c].iter().copied()).collect();
            }
        });
        out
    }

    /// Mean cross-entropy over a batch and its gradient, streamed layer by layer from the top.
    ///
    /// `apply(layer, grad, weight)` receives the batch-averaged gradient of layer `l` after the
    /// backward signal below it has been computed, so it may update `weight` in place.
    pub fn backward_batch(
        &mut self,
        inputs: &[f64],
        labels: &[usize],
        mut apply: impl FnMut(usize, &Matrix, &mut Matrix),
    ) -> Result<BatchStats> {
        let m = self.width();
        let c = self.classes();
        let batch = labels.len();
        assert_eq!(inputs.len(), batch * m, "batch inputs must be batch x width");
        assert!(batch > 0, "empty batch");

        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.layers());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers() + 1);
        post.push(inputs.to_vec());
        self.forward_batch_each(inputs, |_, h, y| {
            pre.push(h.to_vec());
            post.push(y.to_vec());
        });

        let last = post.last().expect("at least one layer");
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut upstream = vec![0.0; batch * m];
        for (b, &label) in labels.iter().enumerate() {
            assert!(label < c, "label {label} out of range");
            let logits = &last[b * m..b * m + c];
            let loss = log_sum_exp(logits) - logits[label];
            if !loss.is_finite() {
                let layer = (0..self.layers())
                    .find(|&l| pre[l][b * m..(b + 1) * m].iter().any(|v| !v.is_finite()))
                    .map_or(self.layers(), |l| l + 1);
                return Err(Error::NonFinite { layer });
            }
            loss_sum += loss;
            if linalg::argmax(logits) == label {
                correct += 1;
            }
            let p = softmax(logits);
            for k in 0..c {
                upstream[b * m + k] = (p[k] - if k == label { 1.0 } else { 0.0 }) / batch as f64;
            }
        }

        let mut grad = Matrix::zeros(m, m);
        let mut delta = vec![0.0; batch * m];
        for layer in (1..=self.layers()).rev() {
            let h = &pre[layer - 1];
            for (d, (g, hv)) in delta
                .chunks_exact_mut(m)
                .zip(upstream.chunks_exact(m).zip(h.chunks_exact(m)))
            {
                for (i, (di, (&gi, &hi))) in d.iter_mut().zip(g.iter().zip(hv)).enumerate() {
                    *di = gi * self.activation_derivative(layer, i, hi);
                }
            }
            // dW = delta^T y_prev
            linalg::gemm(m, batch, m, &delta, true, &post[layer - 1], false, grad.as_mut_slice(), false);
            if !grad.is_finite() {
                return Err(Error::NonFinite { layer });
            }
            if layer > 1 {
                // upstream = delta W
                linalg::gemm(batch, m, m, &delta, false, self.weight(layer).as_slice(), false, &mut upstream, false);
            }
            apply(layer, &grad, &mut self.weights[layer - 1]);
        }
        Ok(BatchStats {
            loss_sum,
            correct,
            count: batch,
        })
    }
}

/// Loss and accuracy tallies from one batched training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub loss_sum: f64,
    pub correct: usize,
    pub count: usize,
}
