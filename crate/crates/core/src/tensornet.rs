//! Deep TensorNet for mask estimation: a stack of TT-LSTM layers, a TT dense
//! layer with ReLU, and a TT output layer with a sigmoid, applied frame by
//! frame to a feature sequence.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grad::{sgd_momentum_step, OptimizerConfig, OptimizerState, TtlParamGrads};
use crate::grid::Grid;
use crate::lstm::{dense_lstm_param_count, sigmoid, CountConvention, LstmGrads, SequenceCache, TtLstmCell};
use crate::tt::{InitScale, TtLinear, TtShape, TtlCache};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LstmLayerSpec {
    /// Factors of the layer input width `D`.
    pub input_factors: Vec<usize>,
    /// Factors of `H + D`, the width of `[h, x]`.
    pub concat_factors: Vec<usize>,
    /// Factors of the hidden width `H`.
    pub hidden_factors: Vec<usize>,
    pub ranks: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearLayerSpec {
    pub input_factors: Vec<usize>,
    pub output_factors: Vec<usize>,
    pub ranks: Vec<usize>,
}

impl LinearLayerSpec {
    fn shape(&self) -> Result<TtShape> {
        TtShape::plain(
            self.input_factors.clone(),
            self.output_factors.clone(),
            self.ranks.clone(),
        )
    }
}

/// Layer factorization plan.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub lstm: Vec<LstmLayerSpec>,
    pub dense: LinearLayerSpec,
    pub output: LinearLayerSpec,
}

impl Architecture {
    /// 768 -> 3 x TT-LSTM(512) -> TT dense 128 (ReLU) -> TT output 64 (sigmoid), ranks 4.
    pub fn fig2() -> Self {
        let r = vec![1, 4, 4, 1];
        let layer = |input: Vec<usize>, concat: Vec<usize>| LstmLayerSpec {
            input_factors: input,
            concat_factors: concat,
            hidden_factors: vec![16, 16, 2],
            ranks: r.clone(),
        };
        Self {
            lstm: vec![
                layer(vec![16, 16, 3], vec![16, 16, 5]),
                layer(vec![16, 16, 2], vec![16, 16, 4]),
                layer(vec![16, 16, 2], vec![16, 16, 4]),
            ],
            dense: LinearLayerSpec {
                input_factors: vec![16, 8, 4],
                output_factors: vec![4, 8, 4],
                ranks: r.clone(),
            },
            output: LinearLayerSpec {
                input_factors: vec![8, 4, 4],
                output_factors: vec![4, 4, 4],
                ranks: r,
            },
        }
    }

    /// Same topology at toy size: feature width 12, three TT-LSTM layers with
    /// H = 8, dense width 6, mask width 4, ranks 2.
    pub fn reduced() -> Self {
        let r = vec![1, 2, 1];
        Self {
            lstm: vec![
                LstmLayerSpec {
                    input_factors: vec![4, 3],
                    concat_factors: vec![5, 4],
                    hidden_factors: vec![4, 2],
                    ranks: r.clone(),
                },
                LstmLayerSpec {
                    input_factors: vec![4, 2],
                    concat_factors: vec![4, 4],
                    hidden_factors: vec![4, 2],
                    ranks: r.clone(),
                },
                LstmLayerSpec {
                    input_factors: vec![4, 2],
                    concat_factors: vec![4, 4],
                    hidden_factors: vec![4, 2],
                    ranks: r.clone(),
                },
            ],
            dense: LinearLayerSpec {
                input_factors: vec![4, 2],
                output_factors: vec![3, 2],
                ranks: r.clone(),
            },
            output: LinearLayerSpec {
                input_factors: vec![3, 2],
                output_factors: vec![2, 2],
                ranks: r,
            },
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.lstm.first().map_or(0, |l| l.input_factors.iter().product())
    }

    pub fn mask_dim(&self) -> usize {
        self.output.output_factors.iter().product()
    }

    /// Checks the width chain between consecutive layers.
    pub fn validate(&self) -> Result<()> {
        if self.lstm.is_empty() {
            return Err(Error::Shape("at least one LSTM layer is required".into()));
        }
        let mut width = self.feature_dim();
        for (k, l) in self.lstm.iter().enumerate() {
            let d: usize = l.input_factors.iter().product();
            let h: usize = l.hidden_factors.iter().product();
            let concat: usize = l.concat_factors.iter().product();
            if d != width {
                return Err(Error::Shape(format!(
                    "LSTM layer {} expects width {}, receives {}",
                    k + 1,
                    d,
                    width
                )));
            }
            if concat != h + d {
                return Err(Error::Shape(format!(
                    "LSTM layer {}: concat factors give {}, expected H + D = {}",
                    k + 1,
                    concat,
                    h + d
                )));
            }
            TtShape::new(l.concat_factors.clone(), l.hidden_factors.clone(), l.ranks.clone(), 4)?;
            width = h;
        }
        let dense = self.dense.shape()?;
        if dense.input_dim() != width {
            return Err(Error::Shape(format!(
                "dense layer expects {}, receives {}",
                dense.input_dim(),
                width
            )));
        }
        let output = self.output.shape()?;
        if output.input_dim() != dense.output_dim() {
            return Err(Error::Shape(format!(
                "output layer expects {}, receives {}",
                output.input_dim(),
                dense.output_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorNet {
    pub lstm: Vec<TtLstmCell>,
    /// ReLU layer.
    pub dense: TtLinear,
    /// Sigmoid mask layer.
    pub output: TtLinear,
    pub dropout: f64,
    /// Seed the parameters were drawn from.
    pub seed: u64,
}

/// Per-layer parameter accounting.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerCount {
    pub name: String,
    pub tensor_net: usize,
    pub dense_baseline: usize,
}

impl LayerCount {
    pub fn rate(&self) -> f64 {
        self.tensor_net as f64 / self.dense_baseline as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamTable {
    pub layers: Vec<LayerCount>,
}

impl ParamTable {
    pub fn total_tensor_net(&self) -> usize {
        self.layers.iter().map(|l| l.tensor_net).sum()
    }

    pub fn total_dense(&self) -> usize {
        self.layers.iter().map(|l| l.dense_baseline).sum()
    }

    pub fn total_rate(&self) -> f64 {
        self.total_tensor_net() as f64 / self.total_dense() as f64
    }
}

/// Gradients for every trainable array of a [`TensorNet`].
#[derive(Clone, Debug, PartialEq)]
pub struct TensorNetGrads {
    pub lstm: Vec<LstmGrads>,
    pub dense: TtlParamGrads,
    pub output: TtlParamGrads,
}

impl TensorNetGrads {
    pub fn zeros_like(model: &TensorNet) -> Self {
        Self {
            lstm: model.lstm.iter().map(LstmGrads::zeros_like).collect(),
            dense: TtlParamGrads::zeros_like(&model.dense),
            output: TtlParamGrads::zeros_like(&model.output),
        }
    }

    /// Same order as [`TensorNet::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = self.lstm.iter().flat_map(|g| g.slices()).collect();
        v.extend(self.dense.slices());
        v.extend(self.output.slices());
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = self.lstm.iter_mut().flat_map(|g| g.slices_mut()).collect();
        v.extend(self.dense.slices_mut());
        v.extend(self.output.slices_mut());
        v
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    fn add_scaled(&mut self, other: &TensorNetGrads, scale: f64) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }
}

/// Forward intermediates for one sequence.
pub struct ForwardCache {
    lstm: Vec<SequenceCache>,
    /// Inverted-dropout multipliers applied after each LSTM layer (`None` at inference).
    lstm_drop: Vec<Option<Grid>>,
    dense_pre: Grid,
    dense_drop: Option<Grid>,
    dense_caches: Vec<TtlCache>,
    output_caches: Vec<TtlCache>,
    mask: Grid,
}

impl ForwardCache {
    pub fn mask(&self) -> &Grid {
        &self.mask
    }

    /// Dense-layer outputs before the ReLU.
    pub fn dense_preactivation(&self) -> &Grid {
        &self.dense_pre
    }
}

impl TensorNet {
    pub fn zeros(arch: &Architecture, dropout: f64) -> Result<Self> {
        arch.validate()?;
        check_dropout(dropout)?;
        let lstm = arch
            .lstm
            .iter()
            .map(|l| {
                TtLstmCell::zeros(
                    l.input_factors.clone(),
                    l.concat_factors.clone(),
                    l.hidden_factors.clone(),
                    l.ranks.clone(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            lstm,
            dense: TtLinear::zeros(arch.dense.shape()?, true),
            output: TtLinear::zeros(arch.output.shape()?, true),
            dropout,
            seed: 0,
        })
    }

    /// Seeded random initialization.
    pub fn new(arch: &Architecture, seed: u64, dropout: f64) -> Result<Self> {
        let mut model = Self::zeros(arch, dropout)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (cell, spec) in model.lstm.iter_mut().zip(&arch.lstm) {
            *cell = TtLstmCell::random(
                spec.input_factors.clone(),
                spec.concat_factors.clone(),
                spec.hidden_factors.clone(),
                spec.ranks.clone(),
                rng.gen(),
            )?;
        }
        model.dense = TtLinear::random(arch.dense.shape()?, rng.gen(), InitScale::Glorot, true);
        model.output = TtLinear::random(arch.output.shape()?, rng.gen(), InitScale::Glorot, true);
        model.seed = seed;
        Ok(model)
    }

    pub fn architecture(&self) -> Architecture {
        let lin = |t: &TtLinear| LinearLayerSpec {
            input_factors: t.shape().p().to_vec(),
            output_factors: t.shape().q().to_vec(),
            ranks: t.shape().ranks().to_vec(),
        };
        Architecture {
            lstm: self
                .lstm
                .iter()
                .map(|c| LstmLayerSpec {
                    input_factors: c.input_factors().to_vec(),
                    concat_factors: c.gates.shape().p().to_vec(),
                    hidden_factors: c.gates.shape().q().to_vec(),
                    ranks: c.gates.shape().ranks().to_vec(),
                })
                .collect(),
            dense: lin(&self.dense),
            output: lin(&self.output),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.lstm[0].input()
    }

    pub fn mask_dim(&self) -> usize {
        self.output.output_dim()
    }

    pub fn forward(&self, features: &Grid, training: bool, seed: u64) -> Result<Grid> {
        Ok(self.forward_cached(features, training, seed)?.mask)
    }

    /// Forward pass. With `training`, inverted dropout is applied to the
    /// outputs of every LSTM layer and of the dense layer, drawn from `seed`.
    pub fn forward_cached(&self, features: &Grid, training: bool, seed: u64) -> Result<ForwardCache> {
        if features.cols() != self.feature_dim() {
            return Err(Error::InputLength {
                expected: self.feature_dim(),
                actual: features.cols(),
            });
        }
        let t_len = features.rows();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let drop = training && self.dropout > 0.0;
        let mut lstm_caches = Vec::with_capacity(self.lstm.len());
        let mut lstm_drop = Vec::with_capacity(self.lstm.len());
        let mut x = features.clone();
        for cell in &self.lstm {
            let (mut hs, cache) = cell.sequence_forward(&x)?;
            let mask = drop.then(|| dropout_mask(&mut rng, t_len, cell.hidden(), self.dropout));
            if let Some(m) = &mask {
                apply_mask(&mut hs, m);
            }
            lstm_caches.push(cache);
            lstm_drop.push(mask);
            x = hs;
        }
        let mut dense_pre = Grid::zeros(t_len, self.dense.output_dim());
        let mut dense_act = Grid::zeros(t_len, self.dense.output_dim());
        let mut dense_caches = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let (y, c) = self.dense.forward_cached(x.row(t))?;
            for (k, v) in y.iter().enumerate() {
                dense_act.set(t, k, v.max(0.0));
            }
            dense_pre.row_mut(t).copy_from_slice(&y);
            dense_caches.push(c);
        }
        let dense_drop = drop.then(|| dropout_mask(&mut rng, t_len, self.dense.output_dim(), self.dropout));
        if let Some(m) = &dense_drop {
            apply_mask(&mut dense_act, m);
        }
        let mut mask = Grid::zeros(t_len, self.mask_dim());
        let mut output_caches = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let (y, c) = self.output.forward_cached(dense_act.row(t))?;
            for (k, v) in y.iter().enumerate() {
                mask.set(t, k, sigmoid(*v));
            }
            output_caches.push(c);
        }
        if !mask.is_finite() {
            return Err(Error::NonFinite("mask output".into()));
        }
        Ok(ForwardCache {
            lstm: lstm_caches,
            lstm_drop,
            dense_pre,
            dense_drop,
            dense_caches,
            output_caches,
            mask,
        })
    }

    /// Gradients of a loss whose derivative w.r.t. the mask is `dmask`.
    pub fn backward(&self, cache: &ForwardCache, dmask: &Grid, truncation: usize) -> Result<TensorNetGrads> {
        let mut grads = TensorNetGrads::zeros_like(self);
        self.backward_accumulate(cache, dmask, truncation, &mut grads)?;
        Ok(grads)
    }

    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        dmask: &Grid,
        truncation: usize,
        grads: &mut TensorNetGrads,
    ) -> Result<()> {
        let t_len = cache.mask.rows();
        if dmask.rows() != t_len || dmask.cols() != self.mask_dim() {
            return Err(Error::CacheMismatch("mask gradient shape".into()));
        }
        if cache.lstm.len() != self.lstm.len() || cache.output_caches.len() != t_len {
            return Err(Error::CacheMismatch("forward cache from a different model".into()));
        }
        let mut d_dense = Grid::zeros(t_len, self.dense.output_dim());
        for t in 0..t_len {
            let dz: Vec<f64> = (0..self.mask_dim())
                .map(|k| {
                    let s = cache.mask.get(t, k);
                    dmask.get(t, k) * s * (1.0 - s)
                })
                .collect();
            let dx = self
                .output
                .backward_accumulate(&cache.output_caches[t], &dz, &mut grads.output)?;
            d_dense.row_mut(t).copy_from_slice(&dx);
        }
        if let Some(m) = &cache.dense_drop {
            apply_mask(&mut d_dense, m);
        }
        let h_top = self.lstm.last().map(|c| c.hidden()).unwrap_or(0);
        let mut dh = Grid::zeros(t_len, h_top);
        for t in 0..t_len {
            let dpre: Vec<f64> = d_dense
                .row(t)
                .iter()
                .zip(cache.dense_pre.row(t))
                .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
                .collect();
            let dx = self
                .dense
                .backward_accumulate(&cache.dense_caches[t], &dpre, &mut grads.dense)?;
            dh.row_mut(t).copy_from_slice(&dx);
        }
        for k in (0..self.lstm.len()).rev() {
            if let Some(m) = &cache.lstm_drop[k] {
                apply_mask(&mut dh, m);
            }
            dh = self.lstm[k].sequence_backward(&cache.lstm[k], &dh, truncation, &mut grads.lstm[k])?;
        }
        Ok(())
    }

    /// Trainable arrays in a fixed order: per LSTM layer its cores then gate
    /// biases, then dense cores and bias, then output cores and bias.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for cell in &mut self.lstm {
            v.extend(cell.gates.cores.iter_mut().map(|c| c.data.as_mut_slice()));
            v.push(&mut cell.gate_bias);
        }
        for layer in [&mut self.dense, &mut self.output] {
            v.extend(layer.cores.iter_mut().map(|c| c.data.as_mut_slice()));
            if let Some(b) = &mut layer.bias {
                v.push(b);
            }
        }
        v
    }

    pub fn flat_params(&mut self) -> Vec<f64> {
        self.param_slices_mut().iter().flat_map(|s| s.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let mut slices = self.param_slices_mut();
        let total: usize = slices.iter().map(|s| s.len()).sum();
        if total != flat.len() {
            return Err(Error::InputLength {
                expected: total,
                actual: flat.len(),
            });
        }
        let mut off = 0;
        for s in slices.iter_mut() {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        }
        Ok(())
    }

    pub fn count_params(&self, convention: CountConvention) -> Result<ParamTable> {
        let mut layers = Vec::new();
        for (k, cell) in self.lstm.iter().enumerate() {
            layers.push(LayerCount {
                name: format!("Layer {} (TT-LSTM)", k + 1),
                tensor_net: cell.param_count(convention)?,
                dense_baseline: dense_lstm_param_count(cell.hidden(), cell.input()),
            });
        }
        let n = self.lstm.len();
        for (k, (label, layer)) in [("dense", &self.dense), ("output", &self.output)]
            .into_iter()
            .enumerate()
        {
            layers.push(LayerCount {
                name: format!("Layer {} (TT {})", n + k + 1, label),
                tensor_net: layer.shape().param_count(true),
                dense_baseline: layer.shape().dense_param_count(true),
            });
        }
        Ok(ParamTable { layers })
    }
}

fn check_dropout(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Invalid(format!(
            "dropout probability must be in [0, 1), got {p}"
        )));
    }
    Ok(())
}

fn dropout_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize, p: f64) -> Grid {
    let keep = 1.0 / (1.0 - p);
    Grid::from_fn(rows, cols, |_, _| if rng.gen::<f64>() < p { 0.0 } else { keep })
}

fn apply_mask(g: &mut Grid, m: &Grid) {
    for (v, k) in g.data_mut().iter_mut().zip(m.data()) {
        *v *= k;
    }
}

/// Mean squared error over all entries.
pub fn mask_mse_loss(predicted: &Grid, target: &Grid) -> Result<f64> {
    check_same_shape(predicted, target)?;
    let n = predicted.data().len();
    if n == 0 {
        return Err(Error::Shape("empty mask".into()));
    }
    Ok(predicted
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n as f64)
}

/// Derivative of [`mask_mse_loss`] w.r.t. the prediction.
pub fn mask_mse_grad(predicted: &Grid, target: &Grid) -> Result<Grid> {
    check_same_shape(predicted, target)?;
    let n = predicted.data().len() as f64;
    let data = predicted
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect();
    Grid::from_vec(predicted.rows(), predicted.cols(), data)
}

fn check_same_shape(a: &Grid, b: &Grid) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, target is {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

/// One training sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Grid,
    pub target: Grid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    /// Sequences per optimizer step.
    pub batch_size: usize,
    pub dropout: f64,
    pub seed: u64,
    /// BPTT window; 0 means full sequences.
    pub truncation: usize,
    /// Fraction of the data held out for validation (used by the CLI split).
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let opt = OptimizerConfig::default();
        Self {
            learning_rate: opt.learning_rate,
            momentum: opt.momentum,
            clip_norm: opt.clip_norm,
            epochs: 20,
            batch_size: 1,
            dropout: 0.5,
            seed: 1,
            truncation: 0,
            val_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Invalid("momentum must be in [0, 1)".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Invalid("clip_norm must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Invalid("val_fraction must be in [0, 1)".into()));
        }
        check_dropout(self.dropout)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Inference-mode loss on the training set before the first update.
    pub initial_loss: f64,
    /// Mean training loss (with dropout) over each epoch's steps.
    pub train_loss: Vec<f64>,
    /// Inference-mode loss on the training set after each epoch.
    pub eval_loss: Vec<f64>,
    /// Inference-mode loss on the validation set after each epoch, if any.
    pub val_loss: Vec<Option<f64>>,
    /// Seconds per epoch. Not part of [`TrainReport::to_csv`].
    pub wall_time: Vec<f64>,
}

impl TrainReport {
    /// Deterministic CSV rendering (wall time excluded).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,eval_loss,val_loss\n");
        s.push_str(&format!("0,,{:.17e},\n", self.initial_loss));
        for e in 0..self.train_loss.len() {
            let val = self.val_loss[e].map(|v| format!("{v:.17e}")).unwrap_or_default();
            s.push_str(&format!(
                "{},{:.17e},{:.17e},{}\n",
                e + 1,
                self.train_loss[e],
                self.eval_loss[e],
                val
            ));
        }
        s
    }
}

/// Mean inference-mode loss over a set of examples.
pub fn evaluate_loss(model: &TensorNet, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Invalid("empty dataset".into()));
    }
    let mut total = 0.0;
    for ex in data {
        let mask = model.forward(&ex.features, false, 0)?;
        total += mask_mse_loss(&mask, &ex.target)?;
    }
    Ok(total / data.len() as f64)
}

/// Loss and gradient for one sequence.
pub fn sequence_loss_and_grads(
    model: &TensorNet,
    ex: &Example,
    training: bool,
    seed: u64,
    truncation: usize,
) -> Result<(f64, TensorNetGrads)> {
    let cache = model.forward_cached(&ex.features, training, seed)?;
    let loss = mask_mse_loss(&cache.mask, &ex.target)?;
    let dmask = mask_mse_grad(&cache.mask, &ex.target)?;
    let grads = model.backward(&cache, &dmask, truncation)?;
    Ok((loss, grads))
}

/// Momentum SGD with BPTT over mini-batches of whole sequences.
///
/// Data order and dropout draws come from `config.seed`, so two runs with the
/// same inputs produce identical parameters and losses. On a non-finite loss
/// or gradient the model is restored to its state before the failing step and
/// a divergence error is returned. With a validation set, the parameters
/// from the epoch with the lowest validation loss are kept.
pub fn train(
    model: &mut TensorNet,
    data: &[Example],
    validation: &[Example],
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    for ex in data.iter().chain(validation) {
        if ex.features.cols() != model.feature_dim() || ex.target.cols() != model.mask_dim() {
            return Err(Error::Shape(format!(
                "example widths {}/{} do not match model {}/{}",
                ex.features.cols(),
                ex.target.cols(),
                model.feature_dim(),
                model.mask_dim()
            )));
        }
        if ex.features.rows() != ex.target.rows() {
            return Err(Error::Shape("feature and target frame counts differ".into()));
        }
    }
    model.dropout = config.dropout;
    let mut report = TrainReport {
        initial_loss: evaluate_loss(model, data)?,
        train_loss: Vec::new(),
        eval_loss: Vec::new(),
        val_loss: Vec::new(),
        wall_time: Vec::new(),
    };
    if config.epochs == 0 {
        return Ok(report);
    }
    let extents: Vec<usize> = model.param_slices_mut().iter().map(|s| s.len()).collect();
    let mut state = OptimizerState::new(
        OptimizerConfig {
            learning_rate: config.learning_rate,
            momentum: config.momentum,
            clip_norm: config.clip_norm,
        },
        &extents,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0usize;
    let mut best: Option<(f64, TensorNet)> = None;
    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = TensorNetGrads::zeros_like(model);
            let mut batch_loss = 0.0;
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let drop_seed: u64 = rng.gen();
                let (loss, g) = sequence_loss_and_grads(model, &data[idx], true, drop_seed, config.truncation)
                    .map_err(|e| divergence(epoch, step, e))?;
                batch_loss += loss * scale;
                grads.add_scaled(&g, scale);
            }
            if !batch_loss.is_finite() {
                return Err(divergence(epoch, step, Error::NonFinite("loss".into())));
            }
            let snapshot = model.clone();
            let mut params = model.param_slices_mut();
            let stepped = sgd_momentum_step(&mut params, &grads.slices(), &mut state).and_then(|_| {
                if params.iter().all(|p| p.iter().all(|v| v.is_finite())) {
                    Ok(())
                } else {
                    Err(Error::NonFinite("parameters after update".into()))
                }
            });
            drop(params);
            if let Err(e) = stepped {
                *model = snapshot;
                return Err(divergence(epoch, step, e));
            }
            epoch_loss += batch_loss * batch.len() as f64;
            step += 1;
        }
        let eval = evaluate_loss(model, data).map_err(|e| divergence(epoch, step, e))?;
        let val = if validation.is_empty() {
            None
        } else {
            Some(evaluate_loss(model, validation).map_err(|e| divergence(epoch, step, e))?)
        };
        if let Some(v) = val {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.clone()));
            }
        }
        report.train_loss.push(epoch_loss / data.len() as f64);
        report.eval_loss.push(eval);
        report.val_loss.push(val);
        report.wall_time.push(started.elapsed().as_secs_f64());
    }
    if let Some((_, kept)) = best {
        *model = kept;
    }
    Ok(report)
}

fn divergence(epoch: usize, step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Divergence {
            epoch,
            step,
            reason: format!("non-finite {what}"),
        },
        other => other,
    }
}
