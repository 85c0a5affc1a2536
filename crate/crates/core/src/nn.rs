//! Layer building blocks on top of [`crate::autograd`].
//!
//! Layers only hold [`Slot`]s into a parameter [`Store`] (trainable) or a
//! buffer `Store` (running statistics, power-iteration vectors). A forward
//! pass receives both through [`Ctx`], so one architecture can be run with
//! trainable leaves, frozen constants or a restored checkpoint.

use std::io::{Read, Write};
use std::path::Path;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{ConvGeom, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Slot(usize);

/// Named tensors addressed by [`Slot`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Store {
    names: Vec<String>,
    values: Vec<Tensor>,
}

const STORE_MAGIC: &[u8; 4] = b"STS1";

impl Store {
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Slot {
        self.names.push(name.into());
        self.values.push(value);
        Slot(self.values.len() - 1)
    }

    pub fn get(&self, s: Slot) -> &Tensor {
        &self.values[s.0]
    }

    pub fn name(&self, s: Slot) -> &str {
        &self.names[s.0]
    }

    pub fn set(&mut self, s: Slot, value: Tensor) {
        self.values[s.0] = value;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// `(name, shape)` for every entry.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| (n.clone(), v.shape().to_vec()))
            .collect()
    }

    /// Trainable leaves, one per entry.
    pub fn leaves(&self) -> Vec<Var> {
        self.values.iter().map(|v| Var::leaf(v.clone())).collect()
    }

    /// Frozen copies, one per entry.
    pub fn constants(&self) -> Vec<Var> {
        self.values.iter().map(|v| Var::constant(v.clone())).collect()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Store {
        Store {
            names: self.names.clone(),
            values: self.values.iter().map(|v| Tensor::zeros(v.shape())).collect(),
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(STORE_MAGIC)?;
        w.write_all(&(self.values.len() as u32).to_le_bytes())?;
        for (n, v) in self.names.iter().zip(&self.values) {
            w.write_all(&(n.len() as u32).to_le_bytes())?;
            w.write_all(n.as_bytes())?;
            v.write_to(&mut w)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> std::io::Result<Store> {
        use std::io::{Error as IoError, ErrorKind};
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != STORE_MAGIC {
            return Err(IoError::new(ErrorKind::InvalidData, "bad store magic"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        let mut store = Store::default();
        for _ in 0..n {
            r.read_exact(&mut b4)?;
            let len = u32::from_le_bytes(b4) as usize;
            if len > 4096 {
                return Err(IoError::new(ErrorKind::InvalidData, "implausible name length"));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| IoError::new(ErrorKind::InvalidData, "name is not utf-8"))?;
            store.add(name, Tensor::read_from(&mut r)?);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Store> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Store::read_from(std::io::BufReader::new(file)).map_err(|e| Error::load(path, e))
    }

    /// Replaces all values with those of `other`, which must have the same
    /// names and shapes.
    pub fn assign_from(&mut self, other: &Store) -> Result<()> {
        if self.manifest() != other.manifest() {
            return Err(Error::config(
                "stored tensors do not match the architecture's layer manifest",
            ));
        }
        self.values.clone_from(&other.values);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Everything a forward pass reads or updates.
pub struct Ctx<'a> {
    pub params: &'a [Var],
    pub buffers: &'a mut Store,
    pub mode: Mode,
    pub rng: &'a mut ChaCha8Rng,
}

impl Ctx<'_> {
    pub fn p(&self, s: Slot) -> &Var {
        &self.params[s.0]
    }

    pub fn training(&self) -> bool {
        self.mode == Mode::Train
    }
}

/// Glorot/Xavier uniform initialisation.
pub fn xavier_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-a..a))
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Slot,
    pub bias: Slot,
}

impl Linear {
    pub fn new(store: &mut Store, name: &str, inp: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), xavier_uniform(&[inp, out], inp, out, rng)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[out])),
        }
    }

    pub fn forward(&self, cx: &Ctx, x: &Var) -> Result<Var> {
        x.matmul(cx.p(self.weight))?.add(cx.p(self.bias))
    }
}

fn add_channel_bias(y: &Var, bias: &Var) -> Result<Var> {
    let c = bias.shape()[0];
    y.add(&bias.reshape(&[1, c, 1, 1])?)
}

/// 2-D convolution, weight `[C_out, C_in, kh, kw]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Slot,
    pub bias: Option<Slot>,
    pub geom: ConvGeom,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut Store,
        name: &str,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let (kh, kw) = geom.kernel;
        let w = xavier_uniform(&[cout, cin, kh, kw], cin * kh * kw, cout * kh * kw, rng);
        Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[cout]))),
            geom,
        }
    }

    pub fn forward(&self, cx: &Ctx, x: &Var) -> Result<Var> {
        self.forward_with(cx, x, cx.p(self.weight))
    }

    /// Convolution with an externally supplied (e.g. normalized) weight.
    pub fn forward_with(&self, cx: &Ctx, x: &Var, weight: &Var) -> Result<Var> {
        let y = x.conv2d(weight, self.geom)?;
        match self.bias {
            Some(b) => add_channel_bias(&y, cx.p(b)),
            None => Ok(y),
        }
    }
}

/// Transposed convolution, weight `[C_in, C_out, kh, kw]`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: Slot,
    pub bias: Slot,
    pub geom: ConvGeom,
}

impl ConvTranspose2d {
    pub fn new(store: &mut Store, name: &str, cin: usize, cout: usize, geom: ConvGeom, rng: &mut ChaCha8Rng) -> Self {
        let (kh, kw) = geom.kernel;
        let w = xavier_uniform(&[cin, cout, kh, kw], cout * kh * kw, cin * kh * kw, rng);
        Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[cout])),
            geom,
        }
    }

    pub fn forward(&self, cx: &Ctx, x: &Var, out_hw: (usize, usize)) -> Result<Var> {
        let y = x.conv_transpose2d(cx.p(self.weight), self.geom, out_hw)?;
        add_channel_bias(&y, cx.p(self.bias))
    }
}

/// Batch normalization over `(N, H, W)` per channel.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Slot,
    pub beta: Slot,
    pub running_mean: Slot,
    pub running_var: Slot,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new(params: &mut Store, buffers: &mut Store, name: &str, channels: usize) -> Self {
        Self {
            gamma: params.add(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: params.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: buffers.add(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: buffers.add(format!("{name}.running_var"), Tensor::ones(&[channels])),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, cx: &mut Ctx, x: &Var) -> Result<Var> {
        let c = x.shape()[1];
        let cshape = [1, c, 1, 1];
        let (centered, inv_std) = if cx.training() {
            let mean = x.mean_keepdim(&[0, 2, 3])?;
            let centered = x.sub(&mean)?;
            let var = centered.square()?.mean_keepdim(&[0, 2, 3])?;
            let inv_std = var.add_scalar(self.eps).sqrt().recip_nonzero();
            let n = (x.value().len() / c) as f64;
            let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let m = self.momentum;
            let rm = cx.buffers.get(self.running_mean).zip_with(&mean.value().reshape(&[c])?, |r, b| (1.0 - m) * r + m * b)?;
            let rv = cx
                .buffers
                .get(self.running_var)
                .zip_with(&var.value().reshape(&[c])?, |r, b| (1.0 - m) * r + m * b * unbias)?;
            cx.buffers.set(self.running_mean, rm);
            cx.buffers.set(self.running_var, rv);
            (centered, inv_std)
        } else {
            let mean = Var::constant(cx.buffers.get(self.running_mean).reshape(&cshape)?);
            let inv_std = Var::constant(
                cx.buffers
                    .get(self.running_var)
                    .map(|v| 1.0 / (v + self.eps).sqrt())
                    .reshape(&cshape)?,
            );
            (x.sub(&mean)?, inv_std)
        };
        let gamma = cx.p(self.gamma).reshape(&cshape)?;
        let beta = cx.p(self.beta).reshape(&cshape)?;
        centered.mul(&inv_std)?.mul(&gamma)?.add(&beta)
    }
}

/// Inverted dropout: scales survivors by `1/(1-p)` while training.
pub fn dropout(cx: &mut Ctx, x: &Var, p: f64) -> Result<Var> {
    if !cx.training() || p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - p;
    let rng = &mut *cx.rng;
    let mask = Tensor::from_fn(x.shape(), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
    x.mul_const(Rc::new(mask))
}

/// Spectral normalization state for one weight: the left singular vector
/// estimate `u` is a buffer refined by power iteration.
#[derive(Clone, Debug)]
pub struct SpectralNorm {
    pub u: Slot,
    pub rows: usize,
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / n).collect()
}

/// One power-iteration step on the `[rows, cols]` matrix `w`.
fn power_step(w: &[f64], rows: usize, cols: usize, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            v[c] += w[r * cols + c] * u[r];
        }
    }
    let v = normalized(v);
    let mut u2 = vec![0.0; rows];
    for r in 0..rows {
        u2[r] = (0..cols).map(|c| w[r * cols + c] * v[c]).sum();
    }
    (normalized(u2), v)
}

impl SpectralNorm {
    pub const WARMUP_ITERS: usize = 30;

    /// Registers the `u` buffer for `weight` and converges it on the
    /// initial value.
    pub fn new(buffers: &mut Store, name: &str, weight: &Tensor, rng: &mut ChaCha8Rng) -> Self {
        let rows = weight.shape()[0];
        let cols = weight.len() / rows;
        let mut u = normalized((0..rows).map(|_| StandardNormal.sample(rng)).collect());
        for _ in 0..Self::WARMUP_ITERS {
            u = power_step(weight.data(), rows, cols, &u).0;
        }
        Self {
            u: buffers.add(format!("{name}.sn_u"), Tensor::from_vec(u)),
            rows,
        }
    }

    /// `W / sigma(W)`, with `sigma = u^T W v` differentiable in `W`. One
    /// power-iteration step refreshes `u` while training.
    pub fn apply(&self, cx: &mut Ctx, weight: &Var) -> Result<Var> {
        let w = weight.value();
        let cols = w.len() / self.rows;
        let u_now = cx.buffers.get(self.u).data().to_vec();
        let (u, v) = power_step(w.data(), self.rows, cols, &u_now);
        if cx.training() {
            cx.buffers.set(self.u, Tensor::from_vec(u.clone()));
        }
        let u = Var::constant(Tensor::new(vec![1, self.rows], u)?);
        let v = Var::constant(Tensor::new(vec![cols, 1], v)?);
        let sigma = u.matmul(&weight.reshape(&[self.rows, cols])?)?.matmul(&v)?;
        weight.div(&sigma.reshape(&[])?)
    }
}

/// Largest singular value of a `[rows, ...]` weight by many power-iteration
/// steps from a fixed start.
pub fn top_singular_value(weight: &Tensor, iters: usize) -> f64 {
    let rows = weight.shape()[0];
    let cols = weight.len() / rows;
    let mut u = normalized(vec![1.0; rows]);
    let mut v = vec![0.0; cols];
    for _ in 0..iters {
        (u, v) = power_step(weight.data(), rows, cols, &u);
    }
    (0..rows)
        .map(|r| u[r] * (0..cols).map(|c| weight.data()[r * cols + c] * v[c]).sum::<f64>())
        .sum::<f64>()
        .abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn batchnorm_standardizes_in_training() {
        let mut params = Store::default();
        let mut buffers = Store::default();
        let bn = BatchNorm2d::new(&mut params, &mut buffers, "bn", 2);
        let x = Var::constant(Tensor::from_fn(&[3, 2, 2, 2], |i| (i as f64).powf(1.3)));
        let leaves = params.constants();
        let mut r = rng();
        let mut cx = Ctx { params: &leaves, buffers: &mut buffers, mode: Mode::Train, rng: &mut r };
        let y = bn.forward(&mut cx, &x).unwrap();
        let per_channel = y.value().permute(&[1, 0, 2, 3]).unwrap();
        for ch in per_channel.unstack() {
            assert!(ch.mean().abs() < 1e-9);
            let var = ch.data().iter().map(|v| v * v).sum::<f64>() / ch.len() as f64;
            assert!((var - 1.0).abs() < 1e-3);
        }
        assert!(buffers.get(bn.running_mean).data()[0] > 0.0);
    }

    #[test]
    fn spectral_norm_bounds_top_singular_value() {
        let mut r = rng();
        let w = xavier_uniform(&[6, 3, 5, 5], 75, 150, &mut r).scale(7.0);
        let mut buffers = Store::default();
        let sn = SpectralNorm::new(&mut buffers, "w", &w, &mut r);
        let leaves: Vec<Var> = vec![];
        let mut cx = Ctx { params: &leaves, buffers: &mut buffers, mode: Mode::Train, rng: &mut r };
        let wn = sn.apply(&mut cx, &Var::constant(w.clone())).unwrap();
        let s = top_singular_value(wn.value(), 200);
        assert!((s - 1.0).abs() < 1e-2, "sigma after normalization {s}");
        assert!(top_singular_value(&w, 200) > 2.0);
    }

    #[test]
    fn store_roundtrip_and_manifest_check() {
        let mut s = Store::default();
        s.add("a.weight", Tensor::from_fn(&[2, 3], |i| i as f64));
        s.add("a.bias", Tensor::zeros(&[3]));
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        let back = Store::read_from(&buf[..]).unwrap();
        assert_eq!(back, s);
        let mut other = Store::default();
        other.add("a.weight", Tensor::zeros(&[3, 2]));
        other.add("a.bias", Tensor::zeros(&[3]));
        assert!(other.assign_from(&s).is_err());
        assert!(Store::read_from(&buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn dropout_is_identity_in_eval_and_rescales_in_train() {
        let x = Var::constant(Tensor::ones(&[1000]));
        let mut buffers = Store::default();
        let mut r = rng();
        let mut cx = Ctx { params: &[], buffers: &mut buffers, mode: Mode::Eval, rng: &mut r };
        assert_eq!(dropout(&mut cx, &x, 0.2).unwrap().value(), x.value());
        cx.mode = Mode::Train;
        let y = dropout(&mut cx, &x, 0.2).unwrap();
        let zeros = y.value().data().iter().filter(|&&v| v == 0.0).count();
        assert!((150..250).contains(&zeros));
        assert!(y.value().data().iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-12));
    }
}
