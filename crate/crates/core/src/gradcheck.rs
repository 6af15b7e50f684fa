//! Finite-difference verification suites for the TT layer, the TT-LSTM
//! (full BPTT) and the reduced end-to-end network.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grad::{max_relative_error, numeric_gradient, TtlParamGrads};
use crate::grid::Grid;
use crate::lstm::{LstmGrads, TtLstmCell};
use crate::tensornet::{mask_mse_grad, mask_mse_loss, Architecture, TensorNet};
use crate::tt::{InitScale, TtLinear, TtShape};

/// Step for the TT-LSTM check, which uses Richardson-extrapolated central
/// differences: its smallest gradients reach 1e-7, where a plain 1e-6 step
/// is rounding-limited.
pub const LSTM_EPSILON: f64 = 1e-3;
/// Step for the TT layer checks. The layer output is linear in every single
/// scalar (core entry, bias or input), so the squared loss is an exact
/// quadratic along each coordinate and central differences carry no
/// truncation error at any step; a wide step only shrinks rounding.
pub const TTL_EPSILON: f64 = 1e-3;
/// Initial step for the end-to-end network check. Its smallest gradients sit
/// near 1e-10, where a 1e-6 step is dominated by rounding in the loss, so the
/// check runs Ridders' extrapolation of central differences down from a wide
/// step, and shrinks the starting step for any parameter whose stencil moves
/// a ReLU input across zero.
pub const NETWORK_EPSILON: f64 = 1e-2;
/// Pass threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    /// TT layers over a grid of shapes and ranks, plus TT-LSTM BPTT.
    Small,
    /// `Small` plus the three-LSTM toy network, with and without dropout.
    Fig2Reduced,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Suite::Small),
            "fig2-reduced" => Ok(Suite::Fig2Reduced),
            other => Err(Error::Invalid(format!(
                "unknown suite `{other}` (small or fig2-reduced)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub params: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub results: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.max_rel_error <= TOLERANCE)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for r in &self.results {
            let _ = writeln!(
                s,
                "{:<44} params={:>5}  max_rel_error={:.3e}  {}",
                r.name,
                r.params,
                r.max_rel_error,
                if r.max_rel_error <= TOLERANCE { "ok" } else { "FAIL" }
            );
        }
        let _ = writeln!(
            s,
            "overall max_rel_error={:.3e} tolerance={:.0e} {}",
            self.max_error(),
            TOLERANCE,
            if self.passed() { "PASS" } else { "FAIL" }
        );
        s
    }
}

/// Runs a suite. `fault` scales the first analytic gradient entry of every
/// check by `1 + fault`, to confirm that the checker notices wrong gradients.
pub fn run(suite: Suite, seed: u64, fault: Option<f64>) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::new();
    for (p, q) in [
        (vec![3], vec![4]),
        (vec![2, 3], vec![3, 2]),
        (vec![2, 3, 2], vec![2, 2, 3]),
        (vec![2, 2, 2, 2], vec![2, 1, 2, 2]),
    ] {
        for rank in [1, 2, 4] {
            let d = p.len();
            let mut ranks = vec![rank; d + 1];
            ranks[0] = 1;
            ranks[d] = 1;
            let shape = TtShape::plain(p.clone(), q.clone(), ranks)?;
            results.push(ttl_check(&format!("ttl d={d} rank={rank}"), shape, &mut rng, fault)?);
        }
    }
    let fused = TtShape::new(vec![3, 2], vec![2, 2], vec![1, 2, 1], 4)?;
    results.push(ttl_check("ttl gate-fused g=4", fused, &mut rng, fault)?);
    results.push(lstm_check(&mut rng, fault)?);
    if suite == Suite::Fig2Reduced {
        for training in [false, true] {
            results.push(network_check(training, &mut rng, fault)?);
        }
    }
    Ok(GradcheckReport { results })
}

fn random_vec<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn inject(analytic: &mut [f64], fault: Option<f64>) {
    if let (Some(f), Some(first)) = (fault, analytic.first_mut()) {
        *first = if *first == 0.0 { f } else { *first * (1.0 + f) };
    }
}

fn pack(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

fn unpack(flat: &[f64], dst: &mut [&mut [f64]]) {
    let mut off = 0;
    for d in dst.iter_mut() {
        d.copy_from_slice(&flat[off..off + d.len()]);
        off += d.len();
    }
}

fn ttl_param_slices(t: &mut TtLinear) -> Vec<&mut [f64]> {
    let mut v: Vec<&mut [f64]> = t.cores.iter_mut().map(|c| c.data.as_mut_slice()).collect();
    if let Some(b) = &mut t.bias {
        v.push(b);
    }
    v
}

/// Loss `0.5 * |y - target|^2` over cores, bias and input.
fn ttl_check<R: Rng>(name: &str, shape: TtShape, rng: &mut R, fault: Option<f64>) -> Result<CheckResult> {
    let mut layer = TtLinear::random(shape, rng.gen(), InitScale::CoreStd(0.8), true);
    let x = random_vec(layer.input_dim(), rng);
    let target = random_vec(layer.output_dim(), rng);
    let (y, cache) = layer.forward_cached(&x)?;
    let dy: Vec<f64> = y.iter().zip(&target).map(|(a, b)| a - b).collect();
    let mut acc = TtlParamGrads::zeros_like(&layer);
    let dx = layer.backward_accumulate(&cache, &dy, &mut acc)?;
    let mut analytic = pack(&acc.slices());
    analytic.extend(&dx);
    inject(&mut analytic, fault);

    let n_params = analytic.len() - x.len();
    let mut params = pack(&ttl_param_slices(&mut layer).iter().map(|s| &**s).collect::<Vec<_>>());
    params.extend(&x);
    let mut probe = layer.clone();
    let mut loss = |flat: &[f64]| {
        unpack(&flat[..n_params], &mut ttl_param_slices(&mut probe));
        match probe.forward(&flat[n_params..]) {
            Ok(y) => 0.5 * y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
            Err(_) => f64::NAN,
        }
    };
    let numeric = numeric_gradient(&mut loss, &params, TTL_EPSILON)?;
    Ok(CheckResult {
        name: name.to_string(),
        params: params.len(),
        max_rel_error: max_relative_error(&analytic, &numeric),
    })
}

fn cell_slices(c: &mut TtLstmCell) -> Vec<&mut [f64]> {
    let mut v: Vec<&mut [f64]> = c.gates.cores.iter_mut().map(|k| k.data.as_mut_slice()).collect();
    v.push(&mut c.gate_bias);
    v
}

/// T = 3, H = 4, D = 5, rank 2; loss is a fixed random projection of every h_t.
fn lstm_check<R: Rng>(rng: &mut R, fault: Option<f64>) -> Result<CheckResult> {
    let (t_len, h, d) = (3, 4, 5);
    let mut cell = TtLstmCell::random(vec![5], vec![3, 3], vec![2, 2], vec![1, 2, 1], rng.gen())?;
    for v in cell.gate_bias.iter_mut() {
        *v += rng.gen_range(-0.5..0.5);
    }
    let xs = Grid::from_vec(t_len, d, random_vec(t_len * d, rng))?;
    let weights = Grid::from_vec(t_len, h, random_vec(t_len * h, rng))?;
    let (_, cache) = cell.sequence_forward(&xs)?;
    let mut grads = LstmGrads::zeros_like(&cell);
    let dxs = cell.sequence_backward(&cache, &weights, 0, &mut grads)?;
    let mut analytic = pack(&grads.slices());
    analytic.extend(dxs.data());
    inject(&mut analytic, fault);

    let n_params = analytic.len() - xs.data().len();
    let mut params = pack(&cell_slices(&mut cell).iter().map(|s| &**s).collect::<Vec<_>>());
    params.extend(xs.data());
    let mut probe = cell.clone();
    let mut loss = |flat: &[f64]| {
        unpack(&flat[..n_params], &mut cell_slices(&mut probe));
        let xs = match Grid::from_vec(t_len, d, flat[n_params..].to_vec()) {
            Ok(g) => g,
            Err(_) => return f64::NAN,
        };
        match probe.sequence_forward(&xs) {
            Ok((hs, _)) => hs.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum(),
            Err(_) => f64::NAN,
        }
    };
    let numeric = richardson_gradient(&mut loss, &params, LSTM_EPSILON)?;
    Ok(CheckResult {
        name: "tt-lstm bptt T=3 H=4 D=5 rank=2".into(),
        params: params.len(),
        max_rel_error: max_relative_error(&analytic, &numeric),
    })
}

/// `(4 D(h/2) - D(h)) / 3` for central differences `D`; error is O(h^4).
fn richardson_gradient<F: FnMut(&[f64]) -> f64>(loss_fn: &mut F, params: &[f64], h: f64) -> Result<Vec<f64>> {
    let wide = numeric_gradient(loss_fn, params, h)?;
    let narrow = numeric_gradient(loss_fn, params, h / 2.0)?;
    Ok(wide.iter().zip(&narrow).map(|(w, n)| (4.0 * n - w) / 3.0).collect())
}

/// Ridders' polynomial extrapolation of central differences over steps
/// `h, h/1.4, h/1.4^2, ...`, keeping the entry with the smallest error
/// estimate and stopping once the tableau diagonal starts to diverge.
fn ridders<F: FnMut(f64) -> Result<f64>>(f: &mut F, h: f64) -> Result<f64> {
    const CON: f64 = 1.4;
    const CON2: f64 = CON * CON;
    const NTAB: usize = 10;
    const SAFE: f64 = 2.0;
    let mut a = [[0.0; NTAB]; NTAB];
    let mut step = h;
    a[0][0] = (f(step)? - f(-step)?) / (2.0 * step);
    let (mut best, mut err) = (a[0][0], f64::INFINITY);
    for i in 1..NTAB {
        step /= CON;
        a[0][i] = (f(step)? - f(-step)?) / (2.0 * step);
        let mut fac = CON2;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= CON2;
            let e = (a[j][i] - a[j - 1][i]).abs().max((a[j][i] - a[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = a[j][i];
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= SAFE * err {
            break;
        }
    }
    Ok(best)
}

/// Toy network end to end: T = 3, mask MSE loss, optional fixed dropout draw.
fn network_check<R: Rng>(training: bool, rng: &mut R, fault: Option<f64>) -> Result<CheckResult> {
    let arch = Architecture::reduced();
    let t_len = 3;
    let mut model = TensorNet::new(&arch, rng.gen(), if training { 0.3 } else { 0.0 })?;
    // Glorot scale shrinks every layer's output so far that first-layer core
    // gradients drop below what finite differences can resolve.
    for cell in &mut model.lstm {
        cell.gates = TtLinear::random(cell.gates.shape().clone(), rng.gen(), InitScale::CoreStd(0.7), false);
    }
    model.dense = TtLinear::random(model.dense.shape().clone(), rng.gen(), InitScale::CoreStd(1.0), true);
    model.output = TtLinear::random(model.output.shape().clone(), rng.gen(), InitScale::CoreStd(1.0), true);
    // Nonzero biases keep ReLU inputs off the kink when a whole frame is dropped.
    for b in [&mut model.dense.bias, &mut model.output.bias].into_iter().flatten() {
        b.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    }
    let features = Grid::from_vec(t_len, arch.feature_dim(), random_vec(t_len * arch.feature_dim(), rng))?;
    let target = Grid::from_fn(t_len, arch.mask_dim(), |_, _| rng.gen_range(0.0..1.0));
    let drop_seed: u64 = rng.gen();
    let cache = model.forward_cached(&features, training, drop_seed)?;
    let dmask = mask_mse_grad(cache.mask(), &target)?;
    let grads = model.backward(&cache, &dmask, 0)?;
    let mut analytic = grads.flatten();
    inject(&mut analytic, fault);

    let params = model.flat_params();
    let relu_side = |c: &crate::tensornet::ForwardCache| -> Vec<bool> {
        c.dense_preactivation().data().iter().map(|&v| v > 0.0).collect()
    };
    let base_side = relu_side(&cache);
    let mut probe = model.clone();
    let mut eval = |flat: &[f64]| -> Option<(f64, bool)> {
        probe.set_flat_params(flat).ok()?;
        let c = probe.forward_cached(&features, training, drop_seed).ok()?;
        let loss = mask_mse_loss(c.mask(), &target).ok()?;
        Some((loss, relu_side(&c) == base_side))
    };
    let mut numeric = Vec::with_capacity(params.len());
    let mut x = params.clone();
    for k in 0..params.len() {
        let mut h = NETWORK_EPSILON;
        let value = loop {
            let mut smooth = true;
            let mut probe_at = |offset: f64| -> Result<f64> {
                x[k] = params[k] + offset;
                let (loss, same) = eval(&x).ok_or_else(|| Error::NonFinite(format!("loss at parameter {k}")))?;
                x[k] = params[k];
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("loss at parameter {k}")));
                }
                smooth &= same;
                Ok(loss)
            };
            let estimate = ridders(&mut probe_at, h)?;
            if smooth || h < 1e-9 {
                break estimate;
            }
            h /= 8.0;
        };
        numeric.push(value);
    }
    Ok(CheckResult {
        name: format!(
            "network 3xTT-LSTM(8)+dense+output T=3 {}",
            if training { "dropout" } else { "inference" }
        ),
        params: params.len(),
        max_rel_error: max_relative_error(&analytic, &numeric),
    })
}
