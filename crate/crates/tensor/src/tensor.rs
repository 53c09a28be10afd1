use crate::element::Element;
use crate::error::{Result, TensorError};

/// Dense row-major n-dimensional array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E = f32> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: &[usize], data: Vec<E>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::shape("Tensor::new", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, E::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, E::one())
    }

    pub fn scalar(value: E) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> E) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { E::one() } else { E::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<E> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(TensorError::NonScalarLoss(self.shape.clone()))
        }
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(TensorError::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| F::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<E>) -> Result<f64> {
        if self.shape != other.shape {
            return Err(TensorError::shape("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum()
    }

    /// Elementwise `self += other` for equal shapes.
    pub fn add_assign(&mut self, other: &Tensor<E>) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::shape("add_assign", &self.shape, &other.shape));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += *b);
        Ok(())
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Tensor<E> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out` (zero along broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Length of the trailing block of `out` that `shape` repeats over, if
/// `shape` equals a suffix of `out` (after dropping leading ones).
fn suffix_period(shape: &[usize], out: &[usize]) -> Option<usize> {
    let trimmed: &[usize] = {
        let lead = shape.iter().take_while(|&&d| d == 1).count();
        &shape[lead..]
    };
    if trimmed.len() > out.len() {
        return None;
    }
    if out[out.len() - trimmed.len()..] == *trimmed {
        Some(trimmed.iter().product())
    } else {
        None
    }
}

/// Applies `f` over the broadcast of `a` and `b` into `out_shape`.
pub(crate) fn zip_broadcast<E: Element>(
    a: &Tensor<E>,
    b: &Tensor<E>,
    out_shape: &[usize],
    f: impl Fn(E, E) -> E,
) -> Vec<E> {
    let n: usize = out_shape.iter().product();
    if a.shape() == out_shape && b.shape() == out_shape {
        return a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
    }
    if a.shape() == out_shape {
        if let Some(p) = suffix_period(b.shape(), out_shape) {
            return a
                .data
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, b.data[i % p]))
                .collect();
        }
    }
    if b.shape() == out_shape {
        if let Some(p) = suffix_period(a.shape(), out_shape) {
            return b
                .data
                .iter()
                .enumerate()
                .map(|(i, &y)| f(a.data[i % p], y))
                .collect();
        }
    }
    let sa = broadcast_strides(a.shape(), out_shape);
    let sb = broadcast_strides(b.shape(), out_shape);
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let (mut ia, mut ib) = (0usize, 0usize);
    for _ in 0..n {
        out.push(f(a.data[ia], b.data[ib]));
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            ia -= sa[d] * out_shape[d];
            ib -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

/// Sums a gradient of shape `from` down to the broadcast source `to`.
pub(crate) fn sum_to_shape<E: Element>(grad: &Tensor<E>, to: &[usize]) -> Tensor<E> {
    let from = grad.shape();
    if from == to {
        return grad.clone();
    }
    let numel_to: usize = to.iter().product();
    let mut out = vec![E::zero(); numel_to];
    if let Some(p) = suffix_period(to, from) {
        for (i, &g) in grad.data.iter().enumerate() {
            out[i % p] += g;
        }
    } else {
        let st = broadcast_strides(to, from);
        let mut idx = vec![0usize; from.len()];
        let mut it = 0usize;
        for &g in &grad.data {
            out[it] += g;
            for d in (0..from.len()).rev() {
                idx[d] += 1;
                it += st[d];
                if idx[d] < from[d] {
                    break;
                }
                it -= st[d] * from[d];
                idx[d] = 0;
            }
        }
    }
    Tensor {
        shape: to.to_vec(),
        data: out,
    }
}

/// Copies `t` with its axes reordered so output axis `i` is input axis `perm[i]`.
pub(crate) fn permute_data<E: Element>(t: &Tensor<E>, perm: &[usize]) -> Tensor<E> {
    let in_strides = strides(t.shape());
    let out_shape: Vec<usize> = perm.iter().map(|&p| t.shape()[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = t.numel();
    let mut data = Vec::with_capacity(n);
    let rank = out_shape.len();
    if rank == 0 {
        return t.clone();
    }
    // Innermost axis handled as a strided run.
    let inner = out_shape[rank - 1];
    let inner_stride = src_strides[rank - 1];
    let outer: usize = out_shape[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank - 1];
    let mut base = 0usize;
    for _ in 0..outer {
        if inner_stride == 1 {
            data.extend_from_slice(&t.data[base..base + inner]);
        } else {
            data.extend((0..inner).map(|j| t.data[base + j * inner_stride]));
        }
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            base += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            base -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Tensor {
        shape: out_shape,
        data,
    }
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}
