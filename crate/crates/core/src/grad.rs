//! Backward pass for [`TtLinear`], finite-difference checking and the
//! momentum SGD optimizer.

use crate::error::{Error, Result};
use crate::tt::{reverse_digits, TtLinear, TtlCache};

/// Gradients with the same layout as the owning [`TtLinear`].
#[derive(Clone, Debug, PartialEq)]
pub struct TtlGradients {
    pub core_grads: Vec<Vec<f64>>,
    pub bias_grad: Option<Vec<f64>>,
    pub input_grad: Vec<f64>,
}

impl TtlGradients {
    pub fn zeros_like(ttl: &TtLinear) -> Self {
        Self {
            core_grads: ttl.cores.iter().map(|c| vec![0.0; c.data.len()]).collect(),
            bias_grad: ttl.bias.as_ref().map(|b| vec![0.0; b.len()]),
            input_grad: vec![0.0; ttl.input_dim()],
        }
    }
}

/// Parameter gradients accumulated over many backward calls (no input grad).
#[derive(Clone, Debug, PartialEq)]
pub struct TtlParamGrads {
    pub cores: Vec<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

impl TtlParamGrads {
    pub fn zeros_like(ttl: &TtLinear) -> Self {
        Self {
            cores: ttl.cores.iter().map(|c| vec![0.0; c.data.len()]).collect(),
            bias: ttl.bias.as_ref().map(|b| vec![0.0; b.len()]),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = self.cores.iter().map(|c| c.as_slice()).collect();
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = self.cores.iter_mut().map(|c| c.as_mut_slice()).collect();
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }
}

impl TtLinear {
    /// Exact gradients of `dy . y` for the forward pass recorded in `cache`.
    pub fn backward(&self, cache: &TtlCache, dy: &[f64]) -> Result<TtlGradients> {
        let mut acc = TtlParamGrads::zeros_like(self);
        let input_grad = self.backward_accumulate(cache, dy, &mut acc)?;
        Ok(TtlGradients {
            core_grads: acc.cores,
            bias_grad: acc.bias,
            input_grad,
        })
    }

    /// Backward sweep from the last core to the first, adding parameter
    /// gradients into `acc` and returning the input gradient.
    pub fn backward_accumulate(&self, cache: &TtlCache, dy: &[f64], acc: &mut TtlParamGrads) -> Result<Vec<f64>> {
        let shape = self.shape();
        let d = shape.d();
        if dy.len() != self.output_dim() {
            return Err(Error::InputLength {
                expected: self.output_dim(),
                actual: dy.len(),
            });
        }
        if cache.stages.len() != d {
            return Err(Error::CacheMismatch(format!(
                "{} cached stages for {} cores",
                cache.stages.len(),
                d
            )));
        }
        if acc.cores.len() != d || acc.bias.is_some() != self.bias.is_some() {
            return Err(Error::CacheMismatch("gradient buffers do not match layer".into()));
        }
        let sweep = shape.sweep(cache.reversed);
        let mut expected = shape.input_dim();
        for (step, stage) in sweep.iter().zip(&cache.stages) {
            if stage.len() != expected || acc.cores[step.core].len() != self.cores[step.core].data.len() {
                return Err(Error::CacheMismatch(format!(
                    "stage for core {} has wrong extent",
                    step.core
                )));
            }
            expected = step.outer * step.q * step.rb * step.inner;
        }

        if let Some(bg) = &mut acc.bias {
            for (g, v) in bg.iter_mut().zip(dy) {
                *g += v;
            }
        }

        let mut grad_next = if cache.reversed {
            let radices: Vec<usize> = sweep.iter().rev().map(|st| st.q).collect();
            reverse_digits(dy, &radices)
        } else {
            dy.to_vec()
        };
        for (st, prev) in sweep.iter().zip(&cache.stages).rev() {
            let core = &self.cores[st.core];
            let core_grad = &mut acc.cores[st.core];
            let inner = st.inner;
            let mut grad_prev = vec![0.0; prev.len()];
            if inner == 1 {
                for jo in 0..st.outer {
                    for a in 0..st.ra {
                        for i in 0..st.p {
                            let p_idx = (jo * st.ra + a) * st.p + i;
                            let s = prev[p_idx];
                            let mut acc_in = 0.0;
                            for j in 0..st.q {
                                for b in 0..st.rb {
                                    let g = grad_next[(jo * st.q + j) * st.rb + b];
                                    let c_off = st.offset(i, j, a, b, cache.reversed);
                                    acc_in += core.data[c_off] * g;
                                    core_grad[c_off] += g * s;
                                }
                            }
                            grad_prev[p_idx] += acc_in;
                        }
                    }
                }
                grad_next = grad_prev;
                continue;
            }
            for jo in 0..st.outer {
                for a in 0..st.ra {
                    for i in 0..st.p {
                        let p_off = ((jo * st.ra + a) * st.p + i) * inner;
                        let src = &prev[p_off..p_off + inner];
                        let gp = &mut grad_prev[p_off..p_off + inner];
                        for j in 0..st.q {
                            for b in 0..st.rb {
                                let n_off = ((jo * st.q + j) * st.rb + b) * inner;
                                let gn = &grad_next[n_off..n_off + inner];
                                let c_off = st.offset(i, j, a, b, cache.reversed);
                                let w = core.data[c_off];
                                let mut dot = 0.0;
                                for ((g, &s), gpv) in gn.iter().zip(src).zip(gp.iter_mut()) {
                                    dot += g * s;
                                    *gpv += w * g;
                                }
                                core_grad[c_off] += dot;
                            }
                        }
                    }
                }
            }
            grad_next = grad_prev;
        }
        if cache.reversed {
            let radices: Vec<usize> = shape.p().iter().rev().copied().collect();
            grad_next = reverse_digits(&grad_next, &radices);
        }
        Ok(grad_next)
    }
}

/// Central-difference check of an analytic gradient.
///
/// Returns the largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`
/// over all entries.
pub fn finite_diff_check<F>(mut loss_fn: F, params: &[f64], analytic: &[f64], epsilon: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != params.len() {
        return Err(Error::InputLength {
            expected: params.len(),
            actual: analytic.len(),
        });
    }
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let numeric = numeric_gradient(&mut loss_fn, params, epsilon)?;
    Ok(max_relative_error(analytic, &numeric))
}

pub fn numeric_gradient<F>(loss_fn: &mut F, params: &[f64], epsilon: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for k in 0..x.len() {
        let orig = x[k];
        x[k] = orig + epsilon;
        let plus = loss_fn(&x);
        x[k] = orig - epsilon;
        let minus = loss_fn(&x);
        x[k] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss at parameter {k}")));
        }
        out.push((plus - minus) / (2.0 * epsilon));
    }
    Ok(out)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.2,
            momentum: 0.9,
            clip_norm: 5.0,
        }
    }
}

/// Velocity buffers for momentum SGD.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub velocity: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, extents: &[usize]) -> Result<Self> {
        if config.clip_norm.is_nan() || config.clip_norm <= 0.0 {
            return Err(Error::Invalid("clip norm must be positive".into()));
        }
        Ok(Self {
            config,
            velocity: extents.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }
}

/// Clip by global norm, then `v <- m v - lr g; p <- p + v`.
///
/// Non-finite gradients are rejected before any parameter is touched.
/// Returns the pre-clipping gradient norm.
pub fn sgd_momentum_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut OptimizerState) -> Result<f64> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::Shape("parameter, gradient and velocity lists differ".into()));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(&state.velocity) {
        if p.len() != g.len() || p.len() != v.len() {
            return Err(Error::Shape("parameter and gradient extents differ".into()));
        }
    }
    let norm = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    let OptimizerConfig {
        learning_rate,
        momentum,
        clip_norm,
    } = state.config;
    let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        for ((pv, &gv), vv) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *vv = momentum * *vv - learning_rate * scale * gv;
            *pv += *vv;
        }
    }
    Ok(norm)
}
