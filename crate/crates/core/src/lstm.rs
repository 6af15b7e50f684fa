//! TT-LSTM cell: all four gate matrices share one TT map over the
//! concatenated input `[h_{t-1}, x_t]`, fused along the first core's output
//! axis. Gate blocks are ordered input, forget, output, candidate.

use crate::error::{Error, Result};
use crate::grad::TtlParamGrads;
use crate::grid::Grid;
use crate::tt::{DenseMatrix, InitScale, TtLinear, TtShape, TtlCache, RECONSTRUCT_CAP};

pub const GATES: usize = 4;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Parameter counting convention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CountConvention {
    /// Entries actually stored by the implementation.
    Model,
    /// Fused TT over the layer input only (no recurrent weights), plus gate biases.
    Table1,
}

impl std::str::FromStr for CountConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(Self::Model),
            "table1" => Ok(Self::Table1),
            other => Err(Error::Invalid(format!("unknown counting convention '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TtLstmCell {
    hidden: usize,
    input: usize,
    pub gates: TtLinear,
    /// `4H` biases, one `H` block per gate.
    pub gate_bias: Vec<f64>,
    /// Factorization of the layer input used by [`CountConvention::Table1`].
    input_factors: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Everything one step needs for its backward pass.
#[derive(Clone, Debug)]
pub struct StepCache {
    ttl: TtlCache,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl StepCache {
    /// Gate activations `(i, f, o, c~)`.
    pub fn gates(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        (&self.i, &self.f, &self.o, &self.g)
    }
}

#[derive(Clone, Debug)]
pub struct SequenceCache {
    hidden: usize,
    input: usize,
    steps: Vec<StepCache>,
}

impl SequenceCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[StepCache] {
        &self.steps
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmGrads {
    pub gates: TtlParamGrads,
    pub gate_bias: Vec<f64>,
}

impl LstmGrads {
    pub fn zeros_like(cell: &TtLstmCell) -> Self {
        Self {
            gates: TtlParamGrads::zeros_like(&cell.gates),
            gate_bias: vec![0.0; cell.gate_bias.len()],
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.gates.slices();
        v.push(&self.gate_bias);
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.gates.slices_mut();
        v.push(&mut self.gate_bias);
        v
    }
}

impl TtLstmCell {
    /// Zero-initialized cell. `concat_factors` factor `H + D`, `hidden_factors`
    /// factor `H`, and `input_factors` factor `D` (accounting only).
    pub fn zeros(
        input_factors: Vec<usize>,
        concat_factors: Vec<usize>,
        hidden_factors: Vec<usize>,
        ranks: Vec<usize>,
    ) -> Result<Self> {
        let hidden: usize = hidden_factors.iter().product();
        let input: usize = input_factors.iter().product();
        if input_factors.is_empty() || input_factors.contains(&0) {
            return Err(Error::Shape("input factors must be non-empty and >= 1".into()));
        }
        let shape = TtShape::new(concat_factors, hidden_factors, ranks, GATES)?;
        if shape.input_dim() != hidden + input {
            return Err(Error::Shape(format!(
                "concatenated input factors give {}, expected H + D = {} + {}",
                shape.input_dim(),
                hidden,
                input
            )));
        }
        Ok(Self {
            hidden,
            input,
            gates: TtLinear::zeros(shape, false),
            gate_bias: vec![0.0; GATES * hidden],
            input_factors,
        })
    }

    /// Seeded Glorot-scale cores; forget-gate bias 1, others 0.
    pub fn random(
        input_factors: Vec<usize>,
        concat_factors: Vec<usize>,
        hidden_factors: Vec<usize>,
        ranks: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        let mut cell = Self::zeros(input_factors, concat_factors, hidden_factors, ranks)?;
        cell.gates = TtLinear::random(cell.gates.shape().clone(), seed, InitScale::Glorot, false);
        cell.gate_bias[cell.hidden..2 * cell.hidden].fill(1.0);
        Ok(cell)
    }

    /// Assemble from stored parts (used by deserialization).
    pub fn from_parts(gates: TtLinear, gate_bias: Vec<f64>, input_factors: Vec<usize>) -> Result<Self> {
        let shape = gates.shape();
        if shape.gate_fusion() != GATES || gates.bias.is_some() {
            return Err(Error::Shape("LSTM gate map must be 4-way fused without bias".into()));
        }
        let hidden = shape.block_dim();
        let input: usize = input_factors.iter().product();
        if input_factors.is_empty() || shape.input_dim() != hidden + input {
            return Err(Error::Shape(format!(
                "gate map input {} does not equal H + D = {} + {}",
                shape.input_dim(),
                hidden,
                input
            )));
        }
        if gate_bias.len() != GATES * hidden {
            return Err(Error::Shape(format!("gate bias length {} != 4H", gate_bias.len())));
        }
        Ok(Self {
            hidden,
            input,
            gates,
            gate_bias,
            input_factors,
        })
    }

    /// Exact TT form of a dense LSTM (maximal ranks).
    pub fn from_dense(dense: &DenseLstm, concat_factors: Vec<usize>, hidden_factors: Vec<usize>) -> Result<Self> {
        let (h, d) = (dense.hidden, dense.input);
        let w = DenseMatrix::from_fn(h + d, GATES * h, |i, j| dense.weights[j / h].get(j % h, i));
        let gates = TtLinear::from_dense_exact(&w, concat_factors, hidden_factors, GATES)?;
        Self::from_parts(gates, dense.bias.concat(), vec![d])
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn input_factors(&self) -> &[usize] {
        &self.input_factors
    }

    pub fn param_count(&self, convention: CountConvention) -> Result<usize> {
        match convention {
            CountConvention::Model => Ok(self.gates.stored_weights() + self.gate_bias.len()),
            CountConvention::Table1 => {
                let s = self.gates.shape();
                let shape = TtShape::new(self.input_factors.clone(), s.q().to_vec(), s.ranks().to_vec(), GATES)
                    .map_err(|e| Error::Shape(format!("table1 accounting shape: {e}")))?;
                Ok(shape.param_count(true))
            }
        }
    }

    /// Dense equivalent (the reconstruction of each gate block).
    pub fn to_dense(&self) -> Result<DenseLstm> {
        let w = self.gates.reconstruct(RECONSTRUCT_CAP)?;
        let h = self.hidden;
        let weights = std::array::from_fn(|g| DenseMatrix::from_fn(h, w.rows, |r, i| w.get(i, g * h + r)));
        let bias = std::array::from_fn(|g| self.gate_bias[g * h..(g + 1) * h].to_vec());
        Ok(DenseLstm {
            hidden: h,
            input: self.input,
            weights,
            bias,
        })
    }

    pub fn step(&self, x: &[f64], state: &LstmState) -> Result<(LstmState, StepCache)> {
        let h = self.hidden;
        if x.len() != self.input {
            return Err(Error::InputLength {
                expected: self.input,
                actual: x.len(),
            });
        }
        if state.h.len() != h || state.c.len() != h {
            return Err(Error::Shape(format!("state size differs from H = {h}")));
        }
        let mut z = Vec::with_capacity(h + self.input);
        z.extend_from_slice(&state.h);
        z.extend_from_slice(x);
        let (mut a, ttl) = self.gates.forward_cached(&z)?;
        for (av, b) in a.iter_mut().zip(&self.gate_bias) {
            *av += b;
        }
        let (next, mut cache) = gate_update(&a, &state.c, h);
        if next.c.iter().chain(&next.h).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LSTM state".into()));
        }
        cache.ttl = ttl;
        Ok((next, cache))
    }

    /// Run from a zero state over every row of `xs`.
    pub fn sequence_forward(&self, xs: &Grid) -> Result<(Grid, SequenceCache)> {
        if xs.rows() == 0 {
            return Err(Error::Invalid("empty sequence".into()));
        }
        if xs.cols() != self.input {
            return Err(Error::InputLength {
                expected: self.input,
                actual: xs.cols(),
            });
        }
        let mut state = LstmState::zeros(self.hidden);
        let mut hs = Grid::zeros(xs.rows(), self.hidden);
        let mut steps = Vec::with_capacity(xs.rows());
        for t in 0..xs.rows() {
            let (next, cache) = self.step(xs.row(t), &state)?;
            hs.row_mut(t).copy_from_slice(&next.h);
            steps.push(cache);
            state = next;
        }
        Ok((
            hs,
            SequenceCache {
                hidden: self.hidden,
                input: self.input,
                steps,
            },
        ))
    }

    /// Backpropagation through time for upstream gradients `dhs` on every
    /// hidden output. Parameter gradients are added into `grads`; the input
    /// gradient sequence is returned.
    ///
    /// `truncation = 0` runs full BPTT. Otherwise the sequence is cut into
    /// consecutive windows of that many steps and no gradient crosses a window
    /// boundary through the recurrent state.
    pub fn sequence_backward(
        &self,
        cache: &SequenceCache,
        dhs: &Grid,
        truncation: usize,
        grads: &mut LstmGrads,
    ) -> Result<Grid> {
        let h = self.hidden;
        if cache.hidden != h || cache.input != self.input {
            return Err(Error::CacheMismatch("sequence cache from a different cell".into()));
        }
        if dhs.rows() != cache.len() || dhs.cols() != h {
            return Err(Error::CacheMismatch(format!(
                "upstream gradient is {}x{}, cache holds {} steps of width {}",
                dhs.rows(),
                dhs.cols(),
                cache.len(),
                h
            )));
        }
        if grads.gate_bias.len() != self.gate_bias.len() {
            return Err(Error::CacheMismatch("gradient buffers from a different cell".into()));
        }
        let mut dxs = Grid::zeros(cache.len(), self.input);
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut da = vec![0.0; GATES * h];
        for t in (0..cache.len()).rev() {
            if truncation > 0 && (t + 1) % truncation == 0 && t + 1 < cache.len() {
                dh_next.fill(0.0);
                dc_next.fill(0.0);
            }
            let s = &cache.steps[t];
            for u in 0..h {
                let dh = dhs.get(t, u) + dh_next[u];
                let tc = s.tanh_c[u];
                let dc = dc_next[u] + dh * s.o[u] * (1.0 - tc * tc);
                let (i, f, o, g) = (s.i[u], s.f[u], s.o[u], s.g[u]);
                da[u] = dc * g * i * (1.0 - i);
                da[h + u] = dc * s.c_prev[u] * f * (1.0 - f);
                da[2 * h + u] = dh * tc * o * (1.0 - o);
                da[3 * h + u] = dc * i * (1.0 - g * g);
                dc_next[u] = dc * f;
            }
            for (gb, v) in grads.gate_bias.iter_mut().zip(&da) {
                *gb += v;
            }
            let dz = self.gates.backward_accumulate(&s.ttl, &da, &mut grads.gates)?;
            dh_next.copy_from_slice(&dz[..h]);
            dxs.row_mut(t).copy_from_slice(&dz[h..]);
        }
        Ok(dxs)
    }
}

/// Gate nonlinearities and state update from pre-activations `a` (length 4H).
fn gate_update(a: &[f64], c_prev: &[f64], h: usize) -> (LstmState, StepCache) {
    let i: Vec<f64> = a[..h].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = a[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
    let o: Vec<f64> = a[2 * h..3 * h].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = a[3 * h..].iter().map(|&v| v.tanh()).collect();
    let c: Vec<f64> = (0..h).map(|u| i[u] * g[u] + f[u] * c_prev[u]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let hv: Vec<f64> = (0..h).map(|u| o[u] * tanh_c[u]).collect();
    (
        LstmState { h: hv, c },
        StepCache {
            ttl: TtlCache {
                stages: Vec::new(),
                reversed: false,
            },
            i,
            f,
            o,
            g,
            c_prev: c_prev.to_vec(),
            tanh_c,
        },
    )
}

/// Uncompressed LSTM with one `H x (H + D)` matrix per gate.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLstm {
    pub hidden: usize,
    pub input: usize,
    /// Gate order: input, forget, output, candidate.
    pub weights: [DenseMatrix; GATES],
    pub bias: [Vec<f64>; GATES],
}

impl DenseLstm {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            hidden,
            input,
            weights: std::array::from_fn(|_| DenseMatrix::zeros(hidden, hidden + input)),
            bias: std::array::from_fn(|_| vec![0.0; hidden]),
        }
    }

    pub fn step(&self, x: &[f64], state: &LstmState) -> Result<LstmState> {
        let h = self.hidden;
        if x.len() != self.input {
            return Err(Error::InputLength {
                expected: self.input,
                actual: x.len(),
            });
        }
        if state.h.len() != h || state.c.len() != h {
            return Err(Error::Shape(format!("state size differs from H = {h}")));
        }
        let z: Vec<f64> = state.h.iter().chain(x).copied().collect();
        let mut a = Vec::with_capacity(GATES * h);
        for g in 0..GATES {
            for r in 0..h {
                let row = &self.weights[g].data[r * (h + self.input)..(r + 1) * (h + self.input)];
                a.push(row.iter().zip(&z).map(|(w, v)| w * v).sum::<f64>() + self.bias[g][r]);
            }
        }
        Ok(gate_update(&a, &state.c, h).0)
    }

    pub fn param_count(&self) -> usize {
        dense_lstm_param_count(self.hidden, self.input)
    }
}

/// `4 H (H + D) + 4 H`.
pub fn dense_lstm_param_count(hidden: usize, input: usize) -> usize {
    GATES * hidden * (hidden + input) + GATES * hidden
}
