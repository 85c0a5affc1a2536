//! Dense row-major `f64` tensors.
//!
//! This is deliberately small: contiguous storage, numpy-style broadcasting
//! for elementwise arithmetic, axis reductions and a compact little-endian
//! file format. Everything differentiable lives in [`crate::autograd`].

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"STT1";

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Result shape of broadcasting `a` against `b`, numpy rules.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::shape(format!(
                    "cannot broadcast {a:?} with {b:?}"
                )))
            }
        };
    }
    Ok(out)
}

/// Strides for reading a tensor of shape `src` as if it had shape `dst`
/// (zero stride on broadcast axes).
fn broadcast_strides(src: &[usize], dst: &[usize]) -> Vec<usize> {
    let s = strides(src);
    let off = dst.len() - src.len();
    (0..dst.len())
        .map(|i| {
            if i < off || src[i - off] == 1 {
                0
            } else {
                s[i - off]
            }
        })
        .collect()
}

/// Calls `f(out_index, a_index, b_index)` over the broadcast of two shapes.
fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n = numel(out);
    if n == 0 {
        return;
    }
    let nd = out.len();
    if nd == 0 {
        f(0, 0, 0);
        return;
    }
    let mut idx = vec![0usize; nd];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..n {
        f(o, ia, ib);
        // odometer increment
        let mut d = nd;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {} values, got {}",
                numel(&shape),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: (0..numel(shape)).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn into_reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        self.data.iter_mut().for_each(|x| *x = f(*x));
    }

    /// Elementwise combination with numpy broadcasting.
    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Ok(Self {
                shape: self.shape.clone(),
                data,
            });
        }
        if other.data.len() == 1 {
            let b = other.data[0];
            let mut out = self.map(|a| f(a, b));
            out.shape = broadcast_shape(&self.shape, &other.shape)?;
            return Ok(out);
        }
        let shape = broadcast_shape(&self.shape, &other.shape)?;
        let sa = broadcast_strides(&self.shape, &shape);
        let sb = broadcast_strides(&other.shape, &shape);
        let mut data = vec![0.0; numel(&shape)];
        for_each_broadcast(&shape, &sa, &sb, |o, ia, ib| {
            data[o] = f(self.data[ia], other.data[ib]);
        });
        Ok(Self { shape, data })
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|x| x * k)
    }

    /// In-place `self += other` for equal shapes.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "add_assign {:?} += {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Self> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let target = broadcast_shape(&self.shape, shape)?;
        if target != shape {
            return Err(Error::shape(format!(
                "cannot broadcast {:?} to {shape:?}",
                self.shape
            )));
        }
        let sa = broadcast_strides(&self.shape, shape);
        let zero = vec![0; shape.len()];
        let mut data = vec![0.0; numel(shape)];
        for_each_broadcast(shape, &sa, &zero, |o, ia, _| data[o] = self.data[ia]);
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Sums over broadcast axes so the result has shape `shape`; the inverse
    /// bookkeeping of [`Tensor::broadcast_to`].
    pub fn sum_to(&self, shape: &[usize]) -> Result<Self> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let check = broadcast_shape(shape, &self.shape)?;
        if check != self.shape {
            return Err(Error::shape(format!(
                "cannot reduce {:?} to {shape:?}",
                self.shape
            )));
        }
        let sa = broadcast_strides(shape, &self.shape);
        let zero = vec![0; self.shape.len()];
        let mut data = vec![0.0; numel(shape)];
        for_each_broadcast(&self.shape, &zero, &sa, |o, _, ib| data[ib] += self.data[o]);
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Sum over the given axes; reduced axes are kept with length 1.
    pub fn sum_axes_keepdim(&self, axes: &[usize]) -> Result<Self> {
        let mut shape = self.shape.clone();
        for &a in axes {
            if a >= shape.len() {
                return Err(Error::shape(format!(
                    "axis {a} out of range for {:?}",
                    self.shape
                )));
            }
            shape[a] = 1;
        }
        self.sum_to(&shape)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.shape.len() {
            return Err(Error::shape(format!(
                "permutation {perm:?} for {:?}",
                self.shape
            )));
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || seen[p] {
                return Err(Error::shape(format!("invalid permutation {perm:?}")));
            }
            seen[p] = true;
        }
        let src_strides = strides(&self.shape);
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let read: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
        let zero = vec![0; shape.len()];
        let mut data = vec![0.0; self.data.len()];
        for_each_broadcast(&shape, &read, &zero, |o, ia, _| data[o] = self.data[ia]);
        Ok(Self { shape, data })
    }

    /// Slice `len` entries of `axis` starting at `start`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.ndim() || start + len > self.shape[axis] {
            return Err(Error::shape(format!(
                "narrow axis {axis} [{start}, {}) of {:?}",
                start + len,
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let n = self.shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Self { shape, data })
    }

    /// Zero-pad `axis` with `before` and `after` entries.
    pub fn pad_axis(&self, axis: usize, before: usize, after: usize) -> Result<Self> {
        if axis >= self.ndim() {
            return Err(Error::shape(format!("pad axis {axis} of {:?}", self.shape)));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let n = self.shape[axis];
        let m = n + before + after;
        let mut data = vec![0.0; outer * m * inner];
        for o in 0..outer {
            let src = o * n * inner;
            let dst = (o * m + before) * inner;
            data[dst..dst + n * inner].copy_from_slice(&self.data[src..src + n * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = m;
        Ok(Self { shape, data })
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        if axis >= first.ndim() {
            return Err(Error::shape(format!("concat axis {axis} of {:?}", first.shape)));
        }
        let mut total = 0;
        for p in parts {
            let ok = p.ndim() == first.ndim()
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape(format!(
                    "concat mismatch {:?} vs {:?} on axis {axis}",
                    p.shape, first.shape
                )));
            }
            total += p.shape[axis];
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Ok(Self { shape, data })
    }

    /// Rows `[start, start+len)` along axis 0, useful for batching.
    pub fn rows(&self, start: usize, len: usize) -> Result<Self> {
        self.narrow(0, start, len)
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("stack of zero tensors"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::shape(format!(
                    "stack mismatch {:?} vs {:?}",
                    t.shape, first.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }

    /// Splits along axis 0 into `shape[0]` tensors.
    pub fn unstack(&self) -> Vec<Tensor> {
        if self.shape.is_empty() {
            return vec![self.clone()];
        }
        let inner = self.shape[1..].to_vec();
        let n = numel(&inner);
        self.data
            .chunks(n.max(1))
            .take(self.shape[0])
            .map(|c| Tensor {
                shape: inner.clone(),
                data: c.to_vec(),
            })
            .collect()
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        if self.ndim() != 2 || other.ndim() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::shape(format!(
                "matmul {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            1.0,
            (&self.data, k as isize, 1),
            (&other.data, n as isize, 1),
            0.0,
            (&mut out, n as isize, 1),
        );
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from(mut r: impl Read) -> std::io::Result<Self> {
        use std::io::{Error as IoError, ErrorKind};
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(IoError::new(ErrorKind::InvalidData, "bad tensor magic"));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let nd = u32::from_le_bytes(u32buf) as usize;
        if nd > 16 {
            return Err(IoError::new(ErrorKind::InvalidData, "implausible rank"));
        }
        let mut shape = Vec::with_capacity(nd);
        let mut u64buf = [0u8; 8];
        for _ in 0..nd {
            r.read_exact(&mut u64buf)?;
            shape.push(u64::from_le_bytes(u64buf) as usize);
        }
        let n = numel(&shape);
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self { shape, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file)).map_err(|e| Error::load(path, e))
    }
}

/// `c = alpha * a @ b + beta * c` with explicit (row, col) strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: (&[f64], isize, isize),
    b: (&[f64], isize, isize),
    beta: f64,
    c: (&mut [f64], isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices whose extents cover the strided index
    // ranges implied by (m, k, n) and the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.0.as_mut_ptr(),
            c.1,
            c.2,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_add_and_sum_to_are_adjoint() {
        let a = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let b = Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let c = a.add(&b).unwrap();
        assert_eq!(c.shape(), &[2, 3, 4]);
        assert_eq!(c.data()[4], 4.0 + 2.0);
        let r = c.sum_to(&[3, 1]).unwrap();
        // each row of b gets 2*4 contributions
        let expect0: f64 = (0..2)
            .flat_map(|x| (0..4).map(move |k| (x * 12 + k) as f64 + 1.0))
            .sum();
        assert_eq!(r.data()[0], expect0);
    }

    #[test]
    fn permute_roundtrip() {
        let a = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let p = a.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.permute(&[1, 2, 0]).unwrap(), a);
    }

    #[test]
    fn narrow_pad_concat() {
        let a = Tensor::from_fn(&[2, 5], |i| i as f64);
        let n = a.narrow(1, 1, 3).unwrap();
        assert_eq!(n.data(), &[1.0, 2.0, 3.0, 6.0, 7.0, 8.0]);
        let p = n.pad_axis(1, 1, 1).unwrap();
        assert_eq!(p.data(), &[0.0, 1.0, 2.0, 3.0, 0.0, 0.0, 6.0, 7.0, 8.0, 0.0]);
        let c = Tensor::concat(&[&a, &n], 1).unwrap();
        assert_eq!(c.shape(), &[2, 8]);
        assert_eq!(&c.data()[5..8], &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[3.0, 7.0]);
        assert!(a.matmul(&a.reshape(&[4, 1]).unwrap()).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let a = Tensor::from_fn(&[3, 2], |i| i as f64 * 0.5 - 1.0);
        let mut buf = Vec::new();
        a.write_to(&mut buf).unwrap();
        assert_eq!(Tensor::read_from(&buf[..]).unwrap(), a);
        assert!(Tensor::read_from(&buf[..10]).is_err());
    }
}
