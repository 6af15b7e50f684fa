//! Tensor-train (TT) factorized weight matrices.
//!
//! A weight matrix `W` of size `P x Q` with `P = p_1 ... p_d` and
//! `Q = g * q_1 ... q_d` is stored as `d` four-way cores
//! `F_k[i_k, j_k, a, b]` of extents `p_k x (g_k q_k) x r_{k-1} x r_k`, where
//! `g_k = g` for the first core and `1` otherwise. An entry is the product of
//! the `r_{k-1} x r_k` slices selected by the per-core index pairs:
//!
//! ```text
//! W(i, j) = F_1[i_1, j_1] F_2[i_2, j_2] ... F_d[i_d, j_d]
//! ```
//!
//! Row and column indices are split into per-core digits in row-major order
//! (first core most significant). The layer applies `y(j) = sum_i W(i, j) x(i) + b(j)`
//! by contracting the input against one core at a time, so `W` is never formed.
//!
//! With gate fusion `g > 1` the first core's output extent is `g * q_1`; the
//! output vector is then `g` contiguous blocks of `q_1 ... q_d` entries, one per
//! fused matrix, in block order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Default cap on `P * Q` for [`TtLinear::reconstruct`].
pub const RECONSTRUCT_CAP: usize = 1 << 24;

/// Split a flat per-core index `l` into the `(i, j)` pair of a `p x q` core.
#[inline]
pub fn index_map(l: usize, q: usize) -> (usize, usize) {
    (l / q, l % q)
}

/// Inverse of [`index_map`].
#[inline]
pub fn index_unmap(i: usize, j: usize, q: usize) -> usize {
    i * q + j
}

/// Factorization plan for a TT matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TtShape {
    p: Vec<usize>,
    q: Vec<usize>,
    ranks: Vec<usize>,
    gate_fusion: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompressionMode {
    WeightsOnly,
    WithBias,
}

impl TtShape {
    pub fn new(p: Vec<usize>, q: Vec<usize>, ranks: Vec<usize>, gate_fusion: usize) -> Result<Self> {
        let d = p.len();
        if d == 0 {
            return Err(Error::Shape("a TT shape needs at least one core".into()));
        }
        if q.len() != d {
            return Err(Error::Shape(format!(
                "{} input factors but {} output factors",
                d,
                q.len()
            )));
        }
        if ranks.len() != d + 1 {
            return Err(Error::Shape(format!(
                "{} cores need {} ranks, got {}",
                d,
                d + 1,
                ranks.len()
            )));
        }
        if ranks[0] != 1 || ranks[d] != 1 {
            return Err(Error::Shape(format!("boundary ranks must be 1, got {:?}", ranks)));
        }
        if p.iter().chain(&q).chain(&ranks).any(|&v| v == 0) || gate_fusion == 0 {
            return Err(Error::Shape("factors, ranks and gate fusion must be >= 1".into()));
        }
        let shape = Self {
            p,
            q,
            ranks,
            gate_fusion,
        };
        // Reject plans whose sizes overflow usize.
        shape
            .checked_dims()
            .ok_or_else(|| Error::Shape("shape dimensions overflow".into()))?;
        Ok(shape)
    }

    /// Plain (unfused) shape.
    pub fn plain(p: Vec<usize>, q: Vec<usize>, ranks: Vec<usize>) -> Result<Self> {
        Self::new(p, q, ranks, 1)
    }

    fn checked_dims(&self) -> Option<(usize, usize, usize)> {
        let input = self.p.iter().try_fold(1usize, |a, &b| a.checked_mul(b))?;
        let output = self.q.iter().try_fold(self.gate_fusion, |a, &b| a.checked_mul(b))?;
        let mut params = 0usize;
        for k in 0..self.d() {
            let [a, b, c, e] = self.core_extents(k);
            params = params.checked_add(a.checked_mul(b)?.checked_mul(c)?.checked_mul(e)?)?;
        }
        Some((input, output, params))
    }

    pub fn d(&self) -> usize {
        self.p.len()
    }

    pub fn p(&self) -> &[usize] {
        &self.p
    }

    pub fn q(&self) -> &[usize] {
        &self.q
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn gate_fusion(&self) -> usize {
        self.gate_fusion
    }

    pub fn input_dim(&self) -> usize {
        self.p.iter().product()
    }

    /// Output size of one fused block.
    pub fn block_dim(&self) -> usize {
        self.q.iter().product()
    }

    pub fn output_dim(&self) -> usize {
        self.gate_fusion * self.block_dim()
    }

    /// Output extent of core `k` (0-based), including gate fusion on the first core.
    pub fn core_out(&self, k: usize) -> usize {
        if k == 0 {
            self.gate_fusion * self.q[0]
        } else {
            self.q[k]
        }
    }

    /// Extents `[p_k, g_k q_k, r_{k-1}, r_k]` of core `k` (0-based).
    pub fn core_extents(&self, k: usize) -> [usize; 4] {
        [self.p[k], self.core_out(k), self.ranks[k], self.ranks[k + 1]]
    }

    pub fn core_len(&self, k: usize) -> usize {
        self.core_extents(k).iter().product()
    }

    /// Stored parameter count:
    /// `sum_k p_k q_k r_{k-1} r_k + (g - 1) p_1 q_1 r_0 r_1`, plus `Q` bias terms.
    pub fn param_count(&self, include_bias: bool) -> usize {
        let weights: usize = (0..self.d())
            .map(|k| self.p[k] * self.q[k] * self.ranks[k] * self.ranks[k + 1])
            .sum::<usize>()
            + (self.gate_fusion - 1) * self.p[0] * self.q[0] * self.ranks[0] * self.ranks[1];
        if include_bias {
            weights + self.output_dim()
        } else {
            weights
        }
    }

    /// Parameter count of the equivalent dense layer.
    pub fn dense_param_count(&self, include_bias: bool) -> usize {
        let w = self.input_dim() * self.output_dim();
        if include_bias {
            w + self.output_dim()
        } else {
            w
        }
    }

    /// Ratio of TT parameters to dense parameters. Not clamped: full-rank
    /// plans may exceed 1.
    pub fn compression_rate(&self, mode: CompressionMode) -> f64 {
        let bias = mode == CompressionMode::WithBias;
        self.param_count(bias) as f64 / self.dense_param_count(bias) as f64
    }

    /// Rank plan `r_k = min(prod_{m<=k} t_m, prod_{m>k} t_m)` with `t_m` the
    /// per-core mode sizes, which is enough to represent any matrix exactly.
    pub fn full_ranks(p: &[usize], q: &[usize], gate_fusion: usize) -> Vec<usize> {
        let d = p.len();
        let t: Vec<usize> = (0..d)
            .map(|k| p[k] * q[k] * if k == 0 { gate_fusion } else { 1 })
            .collect();
        let mut ranks = vec![1; d + 1];
        for k in 1..d {
            let left: usize = t[..k].iter().product();
            let right: usize = t[k..].iter().product();
            ranks[k] = left.min(right);
        }
        ranks
    }
}

/// One core of a [`TtLinear`], stored row-major over `[p, g*q, r_in, r_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TtCore {
    pub index: usize,
    pub extents: [usize; 4],
    pub data: Vec<f64>,
}

impl TtCore {
    pub fn zeros(index: usize, extents: [usize; 4]) -> Self {
        Self {
            index,
            extents,
            data: vec![0.0; extents.iter().product()],
        }
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, a: usize, b: usize) -> usize {
        let [_, qn, ra, rb] = self.extents;
        ((i * qn + j) * ra + a) * rb + b
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, a: usize, b: usize) -> f64 {
        self.data[self.offset(i, j, a, b)]
    }
}

/// Dense `rows x cols` matrix, row-major. Rows index the layer input.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// `y(j) = sum_i W(i, j) x(i)`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (yj, &w) in y.iter_mut().zip(row) {
                *yj += w * xi;
            }
        }
        y
    }

    /// `z(i) = sum_j W(i, j) y(j)`.
    pub fn apply_transposed(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(y)
                    .map(|(w, v)| w * v)
                    .sum()
            })
            .collect()
    }
}

/// Initialization scale for [`TtLinear::random`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScale {
    /// Per-core std chosen so reconstructed entries have variance `2 / (P + Q)`.
    Glorot,
    /// Fixed per-core standard deviation.
    CoreStd(f64),
}

/// A TT-factorized linear map with optional bias.
#[derive(Clone, Debug, PartialEq)]
pub struct TtLinear {
    shape: TtShape,
    pub cores: Vec<TtCore>,
    pub bias: Option<Vec<f64>>,
}

/// Intermediate contractions from a forward pass, consumed by the backward pass.
///
/// The cores are swept either first-to-last or last-to-first, whichever costs
/// fewer multiply-adds. A reversed sweep is a forward sweep over the reversed
/// core chain (ranks swapped) with input and output digits reversed.
/// `stages[s]` is the working tensor before the `s`-th core of the sweep,
/// laid out as `[J][r][p][R]` with `J` the product of output extents already
/// produced and `R` the product of input factors not yet consumed.
#[derive(Clone, Debug)]
pub struct TtlCache {
    pub(crate) stages: Vec<Vec<f64>>,
    pub(crate) reversed: bool,
}

impl TtLinear {
    pub fn zeros(shape: TtShape, with_bias: bool) -> Self {
        let cores = (0..shape.d())
            .map(|k| TtCore::zeros(k, shape.core_extents(k)))
            .collect();
        let bias = with_bias.then(|| vec![0.0; shape.output_dim()]);
        Self { shape, cores, bias }
    }

    /// Build from explicit core data; validates every extent.
    pub fn from_cores(shape: TtShape, cores: Vec<Vec<f64>>, bias: Option<Vec<f64>>) -> Result<Self> {
        if cores.len() != shape.d() {
            return Err(Error::Shape(format!(
                "expected {} cores, got {}",
                shape.d(),
                cores.len()
            )));
        }
        let cores = cores
            .into_iter()
            .enumerate()
            .map(|(k, data)| {
                let extents = shape.core_extents(k);
                if data.len() != extents.iter().product::<usize>() {
                    return Err(Error::Shape(format!(
                        "core {} has {} entries, extents {:?} need {}",
                        k,
                        data.len(),
                        extents,
                        extents.iter().product::<usize>()
                    )));
                }
                Ok(TtCore {
                    index: k,
                    extents,
                    data,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(b) = &bias {
            if b.len() != shape.output_dim() {
                return Err(Error::Shape(format!(
                    "bias length {} does not match output dim {}",
                    b.len(),
                    shape.output_dim()
                )));
            }
        }
        Ok(Self { shape, cores, bias })
    }

    /// Seeded Gaussian initialization; bias (when requested) starts at zero.
    pub fn random(shape: TtShape, seed: u64, scale: InitScale, with_bias: bool) -> Self {
        let d = shape.d();
        let std = match scale {
            InitScale::CoreStd(s) => s,
            InitScale::Glorot => {
                // Var(W) = prod_k std^2 * prod_{k=1}^{d-1} r_k (number of rank paths).
                let target = 2.0 / (shape.input_dim() + shape.output_dim()) as f64;
                let paths: f64 = shape.ranks()[1..d].iter().map(|&r| r as f64).product();
                (target / paths).powf(1.0 / (2.0 * d as f64))
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut ttl = Self::zeros(shape, with_bias);
        for core in &mut ttl.cores {
            for v in &mut core.data {
                *v = normal.sample(&mut rng);
            }
        }
        ttl
    }

    /// Exact TT representation of a dense matrix.
    ///
    /// Cores left of a pivot core are identity maps that pass their mode index
    /// into the rank, cores right of it do the same from the right, and the
    /// pivot holds the matrix entries. Ranks are therefore as large as needed.
    pub fn from_dense_exact(w: &DenseMatrix, p: Vec<usize>, q: Vec<usize>, gate_fusion: usize) -> Result<Self> {
        let d = p.len();
        let out: Vec<usize> = (0..d).map(|k| if k == 0 { gate_fusion * q[0] } else { q[k] }).collect();
        let t: Vec<usize> = (0..d).map(|k| p[k] * out[k]).collect();
        // Pivot minimizing the pivot core size L * t_m * R.
        let pivot = (0..d)
            .min_by_key(|&m| {
                let left: usize = t[..m].iter().product();
                let right: usize = t[m + 1..].iter().product();
                left * right
            })
            .unwrap_or(0);
        let mut ranks = vec![1; d + 1];
        for k in 0..pivot {
            ranks[k + 1] = ranks[k] * t[k];
        }
        for k in (pivot + 1..d).rev() {
            ranks[k] = t[k] * ranks[k + 1];
        }
        let shape = TtShape::new(p.clone(), q, ranks.clone(), gate_fusion)?;
        if w.rows != shape.input_dim() || w.cols != shape.output_dim() {
            return Err(Error::Shape(format!(
                "matrix is {}x{}, shape expects {}x{}",
                w.rows,
                w.cols,
                shape.input_dim(),
                shape.output_dim()
            )));
        }
        let mut ttl = Self::zeros(shape, false);
        for k in 0..d {
            let core = &mut ttl.cores[k];
            for l in 0..t[k] {
                let (i, j) = index_map(l, out[k]);
                if k < pivot {
                    for a in 0..ranks[k] {
                        let off = core.offset(i, j, a, a * t[k] + l);
                        core.data[off] = 1.0;
                    }
                } else if k > pivot {
                    for b in 0..ranks[k + 1] {
                        let off = core.offset(i, j, l * ranks[k + 1] + b, b);
                        core.data[off] = 1.0;
                    }
                }
            }
        }
        // Pivot core: entry (l_pivot, a, b) = A(digits(a), l_pivot, digits(b)).
        let left_modes = &t[..pivot];
        let right_modes = &t[pivot + 1..];
        let mut digits = vec![0usize; d];
        let core = &mut ttl.cores[pivot];
        for a in 0..ranks[pivot] {
            unflatten(a, left_modes, &mut digits[..pivot]);
            for b in 0..ranks[pivot + 1] {
                unflatten(b, right_modes, &mut digits[pivot + 1..]);
                for l in 0..t[pivot] {
                    digits[pivot] = l;
                    let (mut row, mut col) = (0usize, 0usize);
                    for k in 0..d {
                        let (i, j) = index_map(digits[k], out[k]);
                        row = row * p[k] + i;
                        col = col * out[k] + j;
                    }
                    let (i, j) = index_map(l, out[pivot]);
                    let off = core.offset(i, j, a, b);
                    core.data[off] = w.get(row, col);
                }
            }
        }
        Ok(ttl)
    }

    pub fn shape(&self) -> &TtShape {
        &self.shape
    }

    pub fn input_dim(&self) -> usize {
        self.shape.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.shape.output_dim()
    }

    /// Number of stored weight entries (cores only).
    pub fn stored_weights(&self) -> usize {
        self.cores.iter().map(|c| c.data.len()).sum()
    }

    /// Materialize `W` (test oracle). Refuses matrices above `cap` entries.
    pub fn reconstruct(&self, cap: usize) -> Result<DenseMatrix> {
        let (rows, cols) = (self.input_dim(), self.output_dim());
        if rows.saturating_mul(cols) > cap {
            return Err(Error::ReconstructionTooLarge { rows, cols, cap });
        }
        let d = self.shape.d();
        let out: Vec<usize> = (0..d).map(|k| self.shape.core_out(k)).collect();
        let mut ii = vec![0usize; d];
        let mut jj = vec![0usize; d];
        let mut w = DenseMatrix::zeros(rows, cols);
        for row in 0..rows {
            unflatten(row, self.shape.p(), &mut ii);
            for col in 0..cols {
                unflatten(col, &out, &mut jj);
                // Row vector times each selected slice in turn.
                let mut v = vec![1.0];
                for (k, core) in self.cores.iter().enumerate() {
                    let [_, _, ra, rb] = core.extents;
                    let mut next = vec![0.0; rb];
                    for (a, &va) in v.iter().enumerate().take(ra) {
                        for (b, nb) in next.iter_mut().enumerate() {
                            *nb += va * core.get(ii[k], jj[k], a, b);
                        }
                    }
                    v = next;
                }
                w.data[row * cols + col] = v[0];
            }
        }
        Ok(w)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Forward pass that keeps the partial contractions for [`TtLinear::backward`].
    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, TtlCache)> {
        if x.len() != self.input_dim() {
            return Err(Error::InputLength {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let reversed = self.shape.prefers_reversed_sweep();
        let sweep = self.shape.sweep(reversed);
        let mut stages = Vec::with_capacity(sweep.len());
        let mut current = if reversed {
            reverse_digits(x, self.shape.p())
        } else {
            x.to_vec()
        };
        for step in &sweep {
            let next = contract_core(&current, &self.cores[step.core], step, reversed);
            stages.push(std::mem::replace(&mut current, next));
        }
        if reversed {
            let radices: Vec<usize> = sweep.iter().map(|st| st.q).collect();
            current = reverse_digits(&current, &radices);
        }
        if let Some(b) = &self.bias {
            for (y, bj) in current.iter_mut().zip(b) {
                *y += bj;
            }
        }
        Ok((current, TtlCache { stages, reversed }))
    }
}

/// One core application within a sweep.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SweepStep {
    pub core: usize,
    pub p: usize,
    /// Output extent including gate fusion.
    pub q: usize,
    /// Rank entering and leaving the core in sweep order.
    pub ra: usize,
    pub rb: usize,
    pub outer: usize,
    pub inner: usize,
}

impl SweepStep {
    #[inline]
    pub fn offset(&self, i: usize, j: usize, a: usize, b: usize, reversed: bool) -> usize {
        let (r0, r1) = if reversed {
            (self.rb, self.ra)
        } else {
            (self.ra, self.rb)
        };
        let (a, b) = if reversed { (b, a) } else { (a, b) };
        ((i * self.q + j) * r0 + a) * r1 + b
    }

    fn cost(&self) -> usize {
        self.outer * self.inner * self.p * self.q * self.ra * self.rb
    }
}

impl TtShape {
    pub(crate) fn sweep(&self, reversed: bool) -> Vec<SweepStep> {
        let d = self.d();
        let order: Vec<usize> = if reversed {
            (0..d).rev().collect()
        } else {
            (0..d).collect()
        };
        let mut outer = 1;
        let mut steps = Vec::with_capacity(d);
        for (s, &k) in order.iter().enumerate() {
            let (ra, rb) = if reversed {
                (self.ranks()[k + 1], self.ranks()[k])
            } else {
                (self.ranks()[k], self.ranks()[k + 1])
            };
            let inner = order[s + 1..].iter().map(|&m| self.p()[m]).product();
            let q = self.core_out(k);
            steps.push(SweepStep {
                core: k,
                p: self.p()[k],
                q,
                ra,
                rb,
                outer,
                inner,
            });
            outer *= q;
        }
        steps
    }

    /// Whether a last-to-first sweep needs fewer multiply-adds.
    pub(crate) fn prefers_reversed_sweep(&self) -> bool {
        let cost = |rev| self.sweep(rev).iter().map(SweepStep::cost).sum::<usize>();
        cost(true) < cost(false)
    }
}

/// Reorders a row-major tensor over `radices` so its digits appear in reverse order.
pub(crate) fn reverse_digits(v: &[f64], radices: &[usize]) -> Vec<f64> {
    if radices.len() <= 1 {
        return v.to_vec();
    }
    let rev: Vec<usize> = radices.iter().rev().copied().collect();
    let mut digits = vec![0; radices.len()];
    let mut out = vec![0.0; v.len()];
    for (flat, &val) in v.iter().enumerate() {
        unflatten(flat, radices, &mut digits);
        let mut idx = 0;
        for (&dg, &r) in digits.iter().rev().zip(&rev) {
            idx = idx * r + dg;
        }
        out[idx] = val;
    }
    out
}

/// Apply one core: `out[J][j][b][R] = sum_{a,i} prev[J][a][i][R] * F[i][j][a][b]`.
fn contract_core(prev: &[f64], core: &TtCore, st: &SweepStep, reversed: bool) -> Vec<f64> {
    let inner = st.inner;
    let mut out = vec![0.0; st.outer * st.q * st.rb * inner];
    if inner == 1 {
        for jo in 0..st.outer {
            for a in 0..st.ra {
                for i in 0..st.p {
                    let s = prev[(jo * st.ra + a) * st.p + i];
                    for j in 0..st.q {
                        for b in 0..st.rb {
                            out[(jo * st.q + j) * st.rb + b] += s * core.data[st.offset(i, j, a, b, reversed)];
                        }
                    }
                }
            }
        }
        return out;
    }
    for jo in 0..st.outer {
        for a in 0..st.ra {
            for i in 0..st.p {
                let src_off = ((jo * st.ra + a) * st.p + i) * inner;
                let src = &prev[src_off..src_off + inner];
                for j in 0..st.q {
                    for b in 0..st.rb {
                        let w = core.data[st.offset(i, j, a, b, reversed)];
                        if w == 0.0 {
                            continue;
                        }
                        let dst_off = ((jo * st.q + j) * st.rb + b) * inner;
                        for (o, &s) in out[dst_off..dst_off + inner].iter_mut().zip(src) {
                            *o += w * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Row-major digits of `flat` over `radices`.
pub(crate) fn unflatten(mut flat: usize, radices: &[usize], digits: &mut [usize]) {
    for (dg, &r) in digits.iter_mut().zip(radices).rev() {
        *dg = flat % r;
        flat /= r;
    }
}

/// Most balanced `d`-way factorization of `n` into factors >= 2, in
/// non-increasing order. Minimizes the largest factor; remaining ties go to
/// the lexicographically smallest sequence. `d = 1` always yields `[n]`.
pub fn factorize(n: usize, d: usize) -> Result<Vec<usize>> {
    if d == 0 || n == 0 {
        return Err(Error::Factorization { n, d });
    }
    if d == 1 {
        return Ok(vec![n]);
    }
    fn search(n: usize, d: usize, max: usize, cur: &mut Vec<usize>, best: &mut Option<Vec<usize>>) {
        if d == 1 {
            if n >= 2 && n <= max {
                cur.push(n);
                if best.as_ref().is_none_or(|b| cur.as_slice() < b.as_slice()) {
                    *best = Some(cur.clone());
                }
                cur.pop();
            }
            return;
        }
        let mut f = max.min(n);
        while f >= 2 {
            if n.is_multiple_of(f) {
                cur.push(f);
                search(n / f, d - 1, f, cur, best);
                cur.pop();
            }
            f -= 1;
        }
    }
    let mut best = None;
    search(n, d, n, &mut Vec::with_capacity(d), &mut best);
    best.ok_or(Error::Factorization { n, d })
}

/// Balanced factorizations for both sides of a `P x Q` matrix.
pub fn factorize_dims(input: usize, output: usize, d: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    Ok((factorize(input, d)?, factorize(output, d)?))
}
