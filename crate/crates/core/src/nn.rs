//! Minimal dense-tensor neural substrate.
//!
//! Everything is generic over the scalar so the same forward/backward code
//! runs in f32 for training/inference and in f64 for gradient checking.

use indexmap::IndexMap;
use num_traits::{Float, FromPrimitive};
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::hash::Rng;

pub trait Real:
    Float + FromPrimitive + Default + std::fmt::Debug + std::ops::AddAssign + std::ops::SubAssign + std::ops::MulAssign + 'static
{
    fn real(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).unwrap()
    }
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F: Real> {
    pub dims: Vec<usize>,
    pub data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(dims: &[usize]) -> Self {
        let len = dims.iter().product();
        Tensor { dims: dims.to_vec(), data: vec![F::zero(); len] }
    }

    pub fn from_vec(dims: &[usize], data: Vec<F>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        Tensor { dims: dims.to_vec(), data }
    }

    pub fn rows(&self) -> usize {
        self.dims[0]
    }

    pub fn cols(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn at(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols() + c]
    }

    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut F {
        let cols = self.cols();
        &mut self.data[r * cols + c]
    }

    pub fn row(&self, r: usize) -> &[F] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn fill(&mut self, v: F) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor<F>) -> bool {
        self.dims == other.dims
    }

    /// Convert between scalar widths (used by the f64 gradient-check mode).
    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|x| G::real(x.as_f64())).collect(),
        }
    }
}

/// y = xW + b for x: [n, d_in], W: [d_in, d_out], b: [d_out].
pub fn linear_forward<F: Real>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, d_in) = (x.rows(), x.cols());
    if w.rows() != d_in || b.data.len() != w.cols() {
        return Err(Error::shape(format!(
            "linear: x is {:?}, W is {:?}, b is {:?}",
            x.dims, w.dims, b.dims
        )));
    }
    let d_out = w.cols();
    let mut y = Tensor::zeros(&[n, d_out]);
    for i in 0..n {
        let xi = x.row(i);
        let yi = y.row_mut(i);
        yi.copy_from_slice(&b.data);
        for (k, &xv) in xi.iter().enumerate() {
            if xv == F::zero() {
                continue;
            }
            let wk = w.row(k);
            for (j, yj) in yi.iter_mut().enumerate() {
                *yj += xv * wk[j];
            }
        }
    }
    Ok(y)
}

/// Backward of `linear_forward`. Returns (dx, dW, db).
pub fn linear_backward<F: Real>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    dy: &Tensor<F>,
) -> (Tensor<F>, Tensor<F>, Tensor<F>) {
    let (n, d_in) = (x.rows(), x.cols());
    let d_out = w.cols();
    let mut dx = Tensor::zeros(&[n, d_in]);
    let mut dw = Tensor::zeros(&[d_in, d_out]);
    let mut db = Tensor::zeros(&[d_out]);
    for i in 0..n {
        let dyi = dy.row(i);
        let xi = x.row(i);
        for (j, &g) in dyi.iter().enumerate() {
            db.data[j] += g;
        }
        let dxi = dx.row_mut(i);
        for k in 0..d_in {
            let wk = w.row(k);
            let mut acc = F::zero();
            for (j, &g) in dyi.iter().enumerate() {
                acc += g * wk[j];
            }
            dxi[k] = acc;
            let xv = xi[k];
            if xv != F::zero() {
                let dwk = dw.row_mut(k);
                for (j, &g) in dyi.iter().enumerate() {
                    dwk[j] += xv * g;
                }
            }
        }
    }
    (dx, dw, db)
}

pub fn relu<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| {
        if *v < F::zero() {
            *v = F::zero();
        }
    });
    y
}

/// Backward of ReLU using the forward output as the mask.
pub fn relu_backward<F: Real>(y: &Tensor<F>, dy: &Tensor<F>) -> Tensor<F> {
    let mut dx = dy.clone();
    for (d, &yv) in dx.data.iter_mut().zip(&y.data) {
        if yv <= F::zero() {
            *d = F::zero();
        }
    }
    dx
}

/// Row-wise softmax, stabilized by row-max subtraction.
pub fn softmax<F: Real>(logits: &Tensor<F>) -> Tensor<F> {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Mean cross-entropy over rows plus the gradient wrt logits,
/// dlogits = (softmax - onehot) / n.
pub fn softmax_xent<F: Real>(logits: &Tensor<F>, gold: &[usize]) -> Result<(F, Tensor<F>)> {
    let n = logits.rows();
    let c = logits.cols();
    if gold.len() != n {
        return Err(Error::shape(format!("{n} logit rows but {} gold labels", gold.len())));
    }
    if let Some(&bad) = gold.iter().find(|&&g| g >= c) {
        return Err(Error::data(format!("gold class {bad} out of range for {c} classes")));
    }
    let mut probs = softmax(logits);
    let inv_n = F::one() / F::real(n as f64);
    let mut loss = F::zero();
    let tiny = F::real(1e-300);
    for (i, &g) in gold.iter().enumerate() {
        let p = probs.at(i, g);
        loss -= (p + tiny).ln();
        *probs.at_mut(i, g) -= F::one();
    }
    probs.data.iter_mut().for_each(|v| *v *= inv_n);
    Ok((loss * inv_n, probs))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8, grad_clip: 10.0 }
    }
}

struct Slot<F: Real> {
    value: Tensor<F>,
    grad: Tensor<F>,
    m: Tensor<F>,
    v: Tensor<F>,
}

/// Named parameters with per-tensor Adam moments and a shared step counter.
/// Insertion order is stable and defines serialization order.
pub struct ParamStore<F: Real> {
    slots: IndexMap<String, Slot<F>>,
    pub step: u64,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        ParamStore { slots: IndexMap::new(), step: 0 }
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) {
        let name = name.into();
        let grad = Tensor::zeros(&value.dims);
        let m = Tensor::zeros(&value.dims);
        let v = Tensor::zeros(&value.dims);
        assert!(
            self.slots.insert(name.clone(), Slot { value, grad, m, v }).is_none(),
            "duplicate parameter {name}"
        );
    }

    pub fn names(&self) -> Vec<&str> {
        self.slots.keys().map(|s| s.as_str()).collect()
    }

    pub fn value(&self, name: &str) -> &Tensor<F> {
        &self.slots.get(name).unwrap_or_else(|| panic!("unknown parameter {name}")).value
    }

    pub fn value_mut(&mut self, name: &str) -> &mut Tensor<F> {
        &mut self.slots.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}")).value
    }

    pub fn grad(&self, name: &str) -> &Tensor<F> {
        &self.slots.get(name).unwrap_or_else(|| panic!("unknown parameter {name}")).grad
    }

    /// Accumulate into a parameter's gradient.
    pub fn add_grad(&mut self, name: &str, delta: &Tensor<F>) {
        let slot = self.slots.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert!(slot.grad.same_shape(delta), "gradient shape mismatch for {name}");
        for (g, &d) in slot.grad.data.iter_mut().zip(&delta.data) {
            *g += d;
        }
    }

    /// Accumulate into one row of a parameter's gradient (embedding updates).
    pub fn add_grad_row(&mut self, name: &str, row: usize, delta: &[F]) {
        let slot = self.slots.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        for (g, &d) in slot.grad.row_mut(row).iter_mut().zip(delta) {
            *g += d;
        }
    }

    pub fn zero_grads(&mut self) {
        for slot in self.slots.values_mut() {
            slot.grad.fill(F::zero());
        }
    }

    /// One Adam step with bias correction over all parameters, with global
    /// gradient-norm clipping. Fails fast on non-finite gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        let mut sq_norm = 0.0f64;
        for (name, slot) in &self.slots {
            if !slot.grad.is_finite() {
                return Err(Error::training(format!("non-finite gradient in {name}")));
            }
            sq_norm += slot.grad.data.iter().map(|g| g.as_f64() * g.as_f64()).sum::<f64>();
        }
        let norm = sq_norm.sqrt();
        let scale = if norm > cfg.grad_clip { cfg.grad_clip / norm } else { 1.0 };

        self.step += 1;
        let t = self.step as i32;
        let b1 = F::real(cfg.beta1);
        let b2 = F::real(cfg.beta2);
        let one = F::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let lr = F::real(cfg.lr);
        let eps = F::real(cfg.eps);
        let scale = F::real(scale);

        for slot in self.slots.values_mut() {
            for i in 0..slot.value.data.len() {
                let g = slot.grad.data[i] * scale;
                slot.m.data[i] = b1 * slot.m.data[i] + (one - b1) * g;
                slot.v.data[i] = b2 * slot.v.data[i] + (one - b2) * g * g;
                let m_hat = slot.m.data[i] / bc1;
                let v_hat = slot.v.data[i] / bc2;
                slot.value.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        let mut out = ParamStore::new();
        for (name, slot) in &self.slots {
            out.add(name.clone(), slot.value.cast::<G>());
        }
        out.step = self.step;
        out
    }
}

/// Uniform He-style initialization scaled by fan-in.
pub fn init_linear<F: Real>(
    store: &mut ParamStore<F>,
    prefix: &str,
    d_in: usize,
    d_out: usize,
    rng: &mut Rng,
) {
    let limit = (6.0 / d_in as f64).sqrt();
    let w = Tensor::from_vec(
        &[d_in, d_out],
        (0..d_in * d_out).map(|_| F::real(rng.uniform(limit))).collect(),
    );
    store.add(format!("{prefix}.w"), w);
    store.add(format!("{prefix}.b"), Tensor::zeros(&[d_out]));
}

/// Uniform embedding-table initialization.
pub fn init_table<F: Real>(
    store: &mut ParamStore<F>,
    name: &str,
    rows: usize,
    width: usize,
    rng: &mut Rng,
) {
    let limit = 1.0 / (width as f64).sqrt();
    let t = Tensor::from_vec(
        &[rows, width],
        (0..rows * width).map(|_| F::real(rng.uniform(limit))).collect(),
    );
    store.add(name, t);
}

/// Central finite-difference gradient check.
///
/// `f` must compute the scalar loss and leave the matching analytic
/// gradients in the store (zeroing them first). Tensors larger than
/// `max_per_tensor` elements are spot-checked on a deterministic sample.
/// Returns the maximum relative error over all checked elements.
pub fn grad_check(
    f: &mut dyn FnMut(&mut ParamStore<f64>) -> f64,
    store: &mut ParamStore<f64>,
    h: f64,
    max_per_tensor: usize,
) -> f64 {
    let _ = f(store);
    let names: Vec<String> = store.slots.keys().cloned().collect();
    let analytic: Vec<Tensor<f64>> = names.iter().map(|n| store.grad(n).clone()).collect();

    let mut sampler = Rng::new(0xfd);
    let mut max_rel = 0.0f64;
    for (name, grad) in names.iter().zip(&analytic) {
        let len = grad.data.len();
        let indices: Vec<usize> = if len <= max_per_tensor {
            (0..len).collect()
        } else {
            // Prefer elements that carry gradient; sample the rest.
            let mut active: Vec<usize> = (0..len).filter(|&i| grad.data[i] != 0.0).collect();
            if active.len() > max_per_tensor {
                sampler.shuffle(&mut active);
                active.truncate(max_per_tensor);
            } else {
                while active.len() < max_per_tensor {
                    active.push(sampler.next_below(len as u64) as usize);
                }
            }
            active
        };
        for &i in &indices {
            let orig = store.value(name).data[i];
            store.value_mut(name).data[i] = orig + h;
            let lp = f(store);
            store.value_mut(name).data[i] = orig - h;
            let lm = f(store);
            store.value_mut(name).data[i] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let a = grad.data[i];
            let denom = a.abs().max(numeric.abs()).max(1e-5);
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    // Restore the analytic gradients for the caller.
    let _ = f(store);
    max_rel
}

const BLOB_MAGIC: &[u8; 4] = b"CLMC";
const BLOB_VERSION: u32 = 1;

/// Write parameter values in the weight-blob format: magic "CLMC", u32
/// version, u32 tensor count, then per tensor: u32 name length + UTF-8
/// name, u32 rank, u64 dims, row-major f32 little-endian payload.
pub fn write_blob<W: Write>(w: &mut W, store: &ParamStore<f32>) -> Result<()> {
    w.write_all(BLOB_MAGIC)?;
    w.write_all(&BLOB_VERSION.to_le_bytes())?;
    w.write_all(&(store.slots.len() as u32).to_le_bytes())?;
    for (name, slot) in &store.slots {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(slot.value.dims.len() as u32).to_le_bytes())?;
        for &d in &slot.value.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in &slot.value.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a weight blob back into name -> tensor pairs, preserving order.
pub fn read_blob<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != BLOB_MAGIC {
        return Err(Error::data("bad weight blob magic"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != BLOB_VERSION {
        return Err(Error::data(format!(
            "weight blob format version {version} is not supported (expected {BLOB_VERSION})"
        )));
    }
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf);
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        r.read_exact(&mut u32buf)?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf).map_err(|_| Error::data("blob name is not UTF-8"))?;
        r.read_exact(&mut u32buf)?;
        let rank = u32::from_le_bytes(u32buf) as usize;
        let mut dims = Vec::with_capacity(rank);
        let mut u64buf = [0u8; 8];
        for _ in 0..rank {
            r.read_exact(&mut u64buf)?;
            dims.push(u64::from_le_bytes(u64buf) as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut u32buf)?;
            data.push(f32::from_le_bytes(u32buf));
        }
        out.push((name, Tensor::from_vec(&dims, data)));
    }
    Ok(out)
}

/// Load blob contents into an already-shaped store. Names and shapes must
/// match exactly.
pub fn load_blob_into(store: &mut ParamStore<f32>, entries: Vec<(String, Tensor<f32>)>) -> Result<()> {
    for (name, tensor) in entries {
        let slot = store
            .slots
            .get_mut(&name)
            .ok_or_else(|| Error::data(format!("blob parameter {name} not expected by model")))?;
        if slot.value.dims != tensor.dims {
            return Err(Error::data(format!(
                "blob parameter {name} has dims {:?}, model expects {:?}",
                tensor.dims, slot.value.dims
            )));
        }
        slot.value = tensor;
    }
    Ok(())
}
