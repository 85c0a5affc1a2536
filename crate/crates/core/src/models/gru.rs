//! Gated recurrent unit and its bidirectional wrapper.

use rand_chacha::ChaCha8Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{xavier_uniform, Ctx, Slot, Store};
use crate::tensor::Tensor;

/// The nine tensors of one GRU direction. Input weights are `[in, H]`,
/// recurrent weights `[H, H]`, biases `[H]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruWeights<T> {
    pub w_z: T,
    pub u_z: T,
    pub b_z: T,
    pub w_r: T,
    pub u_r: T,
    pub b_r: T,
    pub w_h: T,
    pub u_h: T,
    pub b_h: T,
}

impl<T> GruWeights<T> {
    fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> GruWeights<U> {
        GruWeights {
            w_z: f(&self.w_z),
            u_z: f(&self.u_z),
            b_z: f(&self.b_z),
            w_r: f(&self.w_r),
            u_r: f(&self.u_r),
            b_r: f(&self.b_r),
            w_h: f(&self.w_h),
            u_h: f(&self.u_h),
            b_h: f(&self.b_h),
        }
    }
}

/// A standalone GRU cell with concrete weights.
pub type GruCell = GruWeights<Tensor>;

impl GruCell {
    pub fn random(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut w = || xavier_uniform(&[input, hidden], input, hidden, rng);
        let (w_z, w_r, w_h) = (w(), w(), w());
        let mut u = || xavier_uniform(&[hidden, hidden], hidden, hidden, rng);
        let (u_z, u_r, u_h) = (u(), u(), u());
        let b = || Tensor::zeros(&[hidden]);
        GruWeights { w_z, u_z, b_z: b(), w_r, u_r, b_r: b(), w_h, u_h, b_h: b() }
    }

    pub fn input_size(&self) -> usize {
        self.w_z.shape()[0]
    }

    pub fn hidden_size(&self) -> usize {
        self.u_z.shape()[0]
    }

    fn vars(&self) -> GruWeights<Var> {
        self.map(|t| Var::constant(t.clone()))
    }

    /// One step for a batch: `x` is `[B, in]`, `h` is `[B, H]`.
    pub fn step(&self, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        let v = self.vars();
        Ok(gru_step(&v, &Var::constant(x.clone()), &Var::constant(h.clone()))?.value().clone())
    }
}

/// `z = s(W_z x + U_z h + b_z)`, `r = s(W_r x + U_r h + b_r)`,
/// `h~ = tanh(W_h x + U_h (r*h) + b_h)`, `h' = (1-z)*h + z*h~`.
pub fn gru_step(w: &GruWeights<Var>, x: &Var, h: &Var) -> Result<Var> {
    let xz = x.matmul(&w.w_z)?;
    let xr = x.matmul(&w.w_r)?;
    let xh = x.matmul(&w.w_h)?;
    step_projected(w, &xz, &xr, &xh, h)
}

fn step_projected(w: &GruWeights<Var>, xz: &Var, xr: &Var, xh: &Var, h: &Var) -> Result<Var> {
    let z = xz.add(&h.matmul(&w.u_z)?)?.add(&w.b_z)?.sigmoid();
    let r = xr.add(&h.matmul(&w.u_r)?)?.add(&w.b_r)?.sigmoid();
    let cand = xh.add(&r.mul(h)?.matmul(&w.u_h)?)?.add(&w.b_h)?.tanh();
    h.add(&z.mul(&cand.sub(h)?)?)
}

/// Runs one direction over `seq` (`[B, T, in]`) from a zero state and
/// returns the hidden states as `[B, T, H]`, in input order.
pub fn gru_sequence(w: &GruWeights<Var>, seq: &Var, reverse: bool) -> Result<Var> {
    let &[b, t, inp] = seq.shape() else {
        return Err(Error::shape(format!("gru expects [B, T, F], got {:?}", seq.shape())));
    };
    let hidden = w.u_z.shape()[0];
    if w.w_z.shape() != [inp, hidden] {
        return Err(Error::shape(format!(
            "gru input weight {:?} does not fit input width {inp}",
            w.w_z.shape()
        )));
    }
    // Project all steps at once: [B*T, in] x [in, H].
    let flat = seq.reshape(&[b * t, inp])?;
    let proj = |m: &Var| -> Result<Var> { flat.matmul(m)?.reshape(&[b, t, hidden]) };
    let (pz, pr, ph) = (proj(&w.w_z)?, proj(&w.w_r)?, proj(&w.w_h)?);
    let at = |p: &Var, i: usize| -> Result<Var> { p.narrow(1, i, 1)?.reshape(&[b, hidden]) };
    let mut h = Var::constant(Tensor::zeros(&[b, hidden]));
    let mut states = vec![None; t];
    let order: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
    for i in order {
        h = step_projected(w, &at(&pz, i)?, &at(&pr, i)?, &at(&ph, i)?, &h)?;
        states[i] = Some(h.reshape(&[b, 1, hidden])?);
    }
    let states: Vec<Var> = states.into_iter().map(|s| s.expect("every step visited")).collect();
    Var::concat(&states, 1)
}

/// Forward and backward passes concatenated on the feature axis:
/// `[B, T, in]` to `[B, T, 2H]`.
pub fn bigru(fwd: &GruWeights<Var>, bwd: &GruWeights<Var>, seq: &Var) -> Result<Var> {
    let f = gru_sequence(fwd, seq, false)?;
    let b = gru_sequence(bwd, seq, true)?;
    Var::concat(&[f, b], 2)
}

/// [`bigru`] on plain tensors, for a single `[T, in]` sequence.
pub fn bigru_layer(fwd: &GruCell, bwd: &GruCell, seq: &Tensor) -> Result<Tensor> {
    let &[t, inp] = seq.shape() else {
        return Err(Error::shape(format!("expected [T, F], got {:?}", seq.shape())));
    };
    let x = Var::constant(seq.reshape(&[1, t, inp])?);
    let out = bigru(&fwd.vars(), &bwd.vars(), &x)?;
    let h2 = out.shape()[2];
    out.value().reshape(&[t, h2])
}

/// A GRU direction registered in a parameter store.
#[derive(Clone, Debug)]
pub struct GruParams(GruWeights<Slot>);

impl GruParams {
    pub fn new(store: &mut Store, name: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let cell = GruCell::random(input, hidden, rng);
        let mut add = |n: &str, t: &Tensor| store.add(format!("{name}.{n}"), t.clone());
        Self(GruWeights {
            w_z: add("w_z", &cell.w_z),
            u_z: add("u_z", &cell.u_z),
            b_z: add("b_z", &cell.b_z),
            w_r: add("w_r", &cell.w_r),
            u_r: add("u_r", &cell.u_r),
            b_r: add("b_r", &cell.b_r),
            w_h: add("w_h", &cell.w_h),
            u_h: add("u_h", &cell.u_h),
            b_h: add("b_h", &cell.b_h),
        })
    }

    pub fn bind(&self, cx: &Ctx) -> GruWeights<Var> {
        self.0.map(|s| cx.p(*s).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Scalar-loop GRU step for a single sample.
    fn naive_step(c: &GruCell, x: &[f64], h: &[f64]) -> Vec<f64> {
        let (inp, hid) = (c.input_size(), c.hidden_size());
        let lin = |w: &Tensor, u: &Tensor, b: &Tensor, hv: &[f64], j: usize| {
            let mut s = b.data()[j];
            for i in 0..inp {
                s += x[i] * w.data()[i * hid + j];
            }
            for k in 0..hid {
                s += hv[k] * u.data()[k * hid + j];
            }
            s
        };
        let z: Vec<f64> = (0..hid).map(|j| sigmoid(lin(&c.w_z, &c.u_z, &c.b_z, h, j))).collect();
        let r: Vec<f64> = (0..hid).map(|j| sigmoid(lin(&c.w_r, &c.u_r, &c.b_r, h, j))).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        (0..hid)
            .map(|j| {
                let cand = lin(&c.w_h, &c.u_h, &c.b_h, &rh, j).tanh();
                (1.0 - z[j]) * h[j] + z[j] * cand
            })
            .collect()
    }

    #[test]
    fn step_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cell = GruCell::random(5, 3, &mut rng);
        cell.b_z = Tensor::from_vec(vec![0.1, -0.2, 0.3]);
        cell.b_h = Tensor::from_vec(vec![-0.4, 0.0, 0.25]);
        let x = Tensor::new(vec![2, 5], (0..10).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let h = Tensor::new(vec![2, 3], vec![0.2, -0.5, 0.9, 0.0, 0.1, -0.3]).unwrap();
        let got = cell.step(&x, &h).unwrap();
        for b in 0..2 {
            let want = naive_step(&cell, &x.data()[b * 5..b * 5 + 5], &h.data()[b * 3..b * 3 + 3]);
            for j in 0..3 {
                assert!((got.data()[b * 3 + j] - want[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn saturated_update_gate_keeps_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cell = GruCell::random(2, 2, &mut rng);
        cell.b_z = Tensor::full(&[2], -60.0);
        let h = Tensor::new(vec![1, 2], vec![0.3, -0.7]).unwrap();
        let out = cell.step(&Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap(), &h).unwrap();
        assert!(out.sub(&h).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn reversal_swaps_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (a, b) = (GruCell::random(4, 3, &mut rng), GruCell::random(4, 3, &mut rng));
        let seq = Tensor::from_fn(&[6, 4], |i| ((i * 7 % 11) as f64 / 5.0) - 1.0);
        let rev = Tensor::stack(&seq.unstack().iter().rev().collect::<Vec<_>>()).unwrap();
        let y = bigru_layer(&a, &b, &seq).unwrap();
        let y_rev = bigru_layer(&b, &a, &rev).unwrap();
        for t in 0..6 {
            for j in 0..3 {
                let yr = &y_rev.data()[(5 - t) * 6..(5 - t) * 6 + 6];
                let yo = &y.data()[t * 6..t * 6 + 6];
                assert!((yo[j] - yr[3 + j]).abs() < 1e-12);
                assert!((yo[3 + j] - yr[j]).abs() < 1e-12);
            }
        }
    }
}
