//! Minimal dense-tensor kernel for the sentence encoder: lookups, 1-D
//! convolution over a sliding window, piecewise max pooling, softmax,
//! dropout, and central-finite-difference gradient verification.
//!
//! Everything runs in [`Real`] precision: `f64` by default, `f32` behind the
//! `f32` cargo feature.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

/// Seeded deterministic generator used for initialization, dropout masks,
/// and shuffles. Identical seeds reproduce identical streams on any platform.
pub type RngState = rand_chacha::ChaCha8Rng;

/// Derive an independent stream from a base seed and a stream path, so e.g.
/// (seed, stage, epoch, batch) each get their own reproducible generator.
pub fn derive_rng(base_seed: u64, path: &[u64]) -> RngState {
    let mut state = base_seed ^ 0x9E37_79B9_7F4A_7C15;
    for &part in path {
        state ^= part.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(state << 6).wrapping_add(state >> 2);
        state = state.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        state ^= state >> 27;
    }
    RngState::seed_from_u64(state)
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<Real>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), values: vec![0.0; n] }
    }

    /// Checked construction: the value count must match the shape and every
    /// value must be finite.
    pub fn from_values(shape: &[usize], values: Vec<Real>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::Contract(format!(
                "shape {shape:?} wants {n} values, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value {bad} rejected at construction")));
        }
        Ok(Tensor { shape: shape.to_vec(), values })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Real] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Real] {
        &mut self.values
    }

    pub fn fill(&mut self, v: Real) {
        self.values.iter_mut().for_each(|x| *x = v);
    }

    /// Row `r` of a 2-D tensor.
    pub fn row(&self, r: usize) -> &[Real] {
        debug_assert_eq!(self.shape.len(), 2);
        let cols = self.shape[1];
        &self.values[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [Real] {
        debug_assert_eq!(self.shape.len(), 2);
        let cols = self.shape[1];
        &mut self.values[r * cols..(r + 1) * cols]
    }

    pub fn at2(&self, r: usize, c: usize) -> Real {
        self.values[r * self.shape[1] + c]
    }

    pub fn euclidean_norm(&self) -> Real {
        self.values.iter().map(|v| v * v).sum::<Real>().sqrt()
    }
}

/// A named tensor with a gradient accumulator of the same shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Parameter {
        let grad = Tensor::zeros(value.shape());
        Parameter { name: name.into(), value, grad }
    }

    /// Uniform init in [-0.1, 0.1], consumed from `rng` in row-major order.
    pub fn uniform(name: impl Into<String>, shape: &[usize], rng: &mut RngState) -> Parameter {
        let n: usize = shape.iter().product();
        let values: Vec<Real> = (0..n).map(|_| rng.random_range(-0.1..0.1) as Real).collect();
        Parameter::new(name, Tensor { shape: shape.to_vec(), values })
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

// ---------------------------------------------------------------------------
// Forward / backward operations
// ---------------------------------------------------------------------------

/// 1-D convolution over token windows. `input` is T x d_in, `filters` is
/// F x (w * d_in) with `w` odd; the input is implicitly zero-padded by
/// (w-1)/2 rows at both ends. Output is T x F.
pub fn conv1d_window(input: &Tensor, filters: &Tensor, window: usize) -> Tensor {
    assert!(window % 2 == 1, "window must be odd");
    let (t_len, d_in) = (input.shape()[0], input.shape()[1]);
    let f_count = filters.shape()[0];
    assert_eq!(filters.shape()[1], window * d_in, "filter width mismatch");
    let pad = (window - 1) / 2;
    let mut out = Tensor::zeros(&[t_len, f_count]);
    for t in 0..t_len {
        for f in 0..f_count {
            let filter = filters.row(f);
            let mut acc: Real = 0.0;
            for w in 0..window {
                let src = t as isize + w as isize - pad as isize;
                if src < 0 || src >= t_len as isize {
                    continue; // zero padding
                }
                let row = input.row(src as usize);
                let base = w * d_in;
                for d in 0..d_in {
                    acc += filter[base + d] * row[d];
                }
            }
            out.row_mut(t)[f] = acc;
        }
    }
    out
}

/// Backward pass of [`conv1d_window`]: given dL/d(output), accumulate
/// dL/d(filters) into `filters_grad` and return dL/d(input).
pub fn conv1d_window_backward(
    input: &Tensor,
    filters: &Tensor,
    window: usize,
    grad_out: &Tensor,
    filters_grad: &mut Tensor,
) -> Tensor {
    let (t_len, d_in) = (input.shape()[0], input.shape()[1]);
    let f_count = filters.shape()[0];
    let pad = (window - 1) / 2;
    let mut grad_in = Tensor::zeros(&[t_len, d_in]);
    for t in 0..t_len {
        for f in 0..f_count {
            let g = grad_out.at2(t, f);
            if g == 0.0 {
                continue;
            }
            for w in 0..window {
                let src = t as isize + w as isize - pad as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let src = src as usize;
                let base = w * d_in;
                for d in 0..d_in {
                    filters_grad.values_mut()[f * (window * d_in) + base + d] += g * input.at2(src, d);
                    grad_in.values_mut()[src * d_in + d] += g * filters.at2(f, base + d);
                }
            }
        }
    }
    grad_in
}

/// Sentinel pooled value for an empty segment. Effectively -inf before the
/// tanh, which maps it to the activation floor -1 and passes no gradient.
pub const EMPTY_SEGMENT_FLOOR: Real = -1e30;

/// Piecewise max pooling of a T x F convolution output. The sentence splits
/// into segments [0, p1], (p1, p2], (p2, T) at the ordered entity positions;
/// the result is 3F values, segment-major. `argmax` records the winning row
/// per slot (None for an empty segment).
#[derive(Debug, Clone)]
pub struct PoolResult {
    pub pooled: Vec<Real>,
    pub argmax: Vec<Option<usize>>,
}

pub fn piecewise_max_pool(conv: &Tensor, head_pos: usize, tail_pos: usize) -> Result<PoolResult> {
    let (t_len, f_count) = (conv.shape()[0], conv.shape()[1]);
    let (p1, p2) = if head_pos <= tail_pos { (head_pos, tail_pos) } else { (tail_pos, head_pos) };
    if p2 >= t_len {
        return Err(Error::Contract(format!(
            "entity position {p2} out of range for {t_len} tokens"
        )));
    }
    let segments = [(0usize, p1 + 1), (p1 + 1, p2 + 1), (p2 + 1, t_len)];
    let mut pooled = vec![0.0; 3 * f_count];
    let mut argmax = vec![None; 3 * f_count];
    for (s, &(lo, hi)) in segments.iter().enumerate() {
        for f in 0..f_count {
            let slot = s * f_count + f;
            if lo >= hi {
                pooled[slot] = EMPTY_SEGMENT_FLOOR;
                continue;
            }
            let mut best = conv.at2(lo, f);
            let mut best_t = lo;
            for t in lo + 1..hi {
                let v = conv.at2(t, f);
                if v > best {
                    best = v;
                    best_t = t;
                }
            }
            pooled[slot] = best;
            argmax[slot] = Some(best_t);
        }
    }
    Ok(PoolResult { pooled, argmax })
}

/// Route pooled gradients back to the argmax rows.
pub fn piecewise_max_pool_backward(pool: &PoolResult, grad_pooled: &[Real], t_len: usize, f_count: usize) -> Tensor {
    let mut grad_conv = Tensor::zeros(&[t_len, f_count]);
    for (slot, &src) in pool.argmax.iter().enumerate() {
        if let Some(t) = src {
            let f = slot % f_count;
            grad_conv.values_mut()[t * f_count + f] += grad_pooled[slot];
        }
    }
    grad_conv
}

/// Numerically stable softmax (max subtraction). Output sums to 1.
pub fn softmax(x: &[Real]) -> Vec<Real> {
    assert!(!x.is_empty());
    let max = x.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let exps: Vec<Real> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: Real = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Gradient of `z = softmax(x)` given dL/dz: dx_i = z_i (dz_i - sum_j z_j dz_j).
pub fn softmax_backward(z: &[Real], grad_z: &[Real]) -> Vec<Real> {
    let dot: Real = z.iter().zip(grad_z).map(|(a, b)| a * b).sum();
    z.iter().zip(grad_z).map(|(&zi, &gi)| zi * (gi - dot)).collect()
}

/// Sample an inverted-dropout keep mask: each element survives with
/// probability 1 - rate.
pub fn dropout_mask(len: usize, rate: Real, rng: &mut RngState) -> Result<Vec<bool>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Domain(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok((0..len).map(|_| rng.random::<f64>() as Real >= rate).collect())
}

/// Apply a keep mask with 1/(1-rate) scaling on survivors.
pub fn apply_dropout_mask(x: &[Real], mask: &[bool], rate: Real) -> Vec<Real> {
    let scale = 1.0 / (1.0 - rate);
    x.iter()
        .zip(mask)
        .map(|(&v, &keep)| if keep { v * scale } else { 0.0 })
        .collect()
}

/// Inverted dropout. During training each element is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate); at inference it is the
/// identity.
pub fn dropout(x: &Tensor, rate: Real, rng: &mut RngState, training: bool) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Domain(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.len(), rate, rng)?;
    let values = apply_dropout_mask(x.values(), &mask, rate);
    Ok(Tensor { shape: x.shape().to_vec(), values })
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub coords_checked: usize,
    pub max_rel_error: Real,
    /// (parameter name, flat coordinate) of the worst error.
    pub worst: Option<(String, usize)>,
    pub tolerance: Real,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.coords_checked == 0 || self.max_rel_error <= self.tolerance
    }
}

/// Compare analytic gradients (already stored in each parameter's `grad`)
/// against central finite differences of `loss_fn`. At most
/// `max_coords_per_param` coordinates per parameter are sampled with `rng`;
/// pass `usize::MAX` to check everything. `loss_fn` must be deterministic.
pub fn check_gradient<S>(
    state: &mut S,
    params_of: impl Fn(&mut S) -> Vec<&mut Parameter>,
    mut loss_fn: impl FnMut(&mut S) -> Real,
    epsilon: Real,
    tolerance: Real,
    max_coords_per_param: usize,
    rng: &mut RngState,
) -> Result<GradCheckReport> {
    let param_count = params_of(state).len();
    let mut report = GradCheckReport {
        coords_checked: 0,
        max_rel_error: 0.0,
        worst: None,
        tolerance,
    };
    for p in 0..param_count {
        let (name, len) = {
            let ps = params_of(state);
            (ps[p].name.clone(), ps[p].value.len())
        };
        let coords: Vec<usize> = if len <= max_coords_per_param {
            (0..len).collect()
        } else {
            let mut picks: Vec<usize> = (0..max_coords_per_param)
                .map(|_| rng.random_range(0..len))
                .collect();
            picks.sort_unstable();
            picks.dedup();
            picks
        };
        for c in coords {
            let original = params_of(state)[p].value.values()[c];
            params_of(state)[p].value.values_mut()[c] = original + epsilon;
            let plus = loss_fn(state);
            params_of(state)[p].value.values_mut()[c] = original - epsilon;
            let minus = loss_fn(state);
            params_of(state)[p].value.values_mut()[c] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss while probing {name}[{c}]"
                )));
            }
            let fd = (plus - minus) / (2.0 * epsilon);
            let analytic = params_of(state)[p].grad.values()[c];
            let scale = fd.abs().max(analytic.abs()).max(1.0);
            let rel = (fd - analytic).abs() / scale;
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), c));
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Embedding and checkpoint files
// ---------------------------------------------------------------------------

/// Pretrained embeddings: first line `<count> <dim>`, then `word v1 .. v_dim`.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<Real>)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, None, "missing header line"))?
        .map_err(|e| Error::io(path, e))?;
    let mut parts = header.split_whitespace();
    let count: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(path, 1, Some("vocab_count"), "not an integer"))?;
    let dim: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(path, 1, Some("dim"), "not an integer"))?;
    let mut out = Vec::with_capacity(count);
    for (lineno, line) in lines.enumerate() {
        let lineno = lineno + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts
            .next()
            .ok_or_else(|| Error::parse(path, lineno, Some("word"), "missing"))?
            .to_string();
        let vec: Vec<Real> = parts
            .map(|s| s.parse::<Real>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, lineno, Some("vector"), "not a number"))?;
        if vec.len() != dim {
            return Err(Error::parse(path, lineno, Some("vector"), format!("expected {dim} values, found {}", vec.len())));
        }
        out.push((word, vec));
    }
    if out.len() != count {
        log::warn!("embedding file declared {count} rows but holds {}", out.len());
    }
    Ok(out)
}

/// Serialized set of named parameters, exact under round-trip (JSON floats
/// are written shortest-round-trip).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    pub params: Vec<Parameter>,
}

pub fn write_params(path: impl AsRef<Path>, params: &[&Parameter]) -> Result<()> {
    let path = path.as_ref();
    let file = ParamFile { params: params.iter().map(|p| (*p).clone()).collect() };
    let out = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(out);
    serde_json::to_writer(&mut w, &file).map_err(|e| Error::Numeric(e.to_string()))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_params(path: impl AsRef<Path>) -> Result<Vec<Parameter>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parsed: ParamFile =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::parse(path, 0, None, e.to_string()))?;
    Ok(parsed.params)
}
